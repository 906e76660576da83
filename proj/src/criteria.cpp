#include "xbatch/criteria.hpp"

#include <cctype>
#include <cmath>
#include <iostream>

#include <json.hpp>

#include "xbatch/plugin.hpp"

namespace xbatch {

namespace {

// segments of the raw token with their character offsets
struct Segment {
  std::string text;
  size_t offset;
};

std::vector<Segment> segments_of(const std::string& token) {
  std::vector<Segment> out;
  size_t start = 0;
  for (size_t i = 0; i <= token.size(); ++i) {
    if (i == token.size() || token[i] == '.') {
      out.push_back({token.substr(start, i - start), start});
      start = i + 1;
    }
  }
  return out;
}

xml::Change set_attr_change(const std::string& path, const std::string& attr, double v) {
  return {xml::ChangeOp::set_attr, path, attr, fmt_double(v)};
}

ValuePoint numeric_point(const CriterionBinding& b, double v) {
  ValuePoint vp;
  vp.label = b.attr + "=" + fmt_double(v);
  vp.numeric = v;
  vp.changes = {set_attr_change(b.path, b.attr, v)};
  return vp;
}

std::vector<double> linspace(double lo, double hi, long long k) {
  std::vector<double> out;
  if (k == 1) {
    out.push_back(lo);
    return out;
  }
  for (long long j = 0; j < k; ++j)
    out.push_back(lo + static_cast<double>(j) * (hi - lo) / static_cast<double>(k - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

CriterionDef parse_population(const CriterionSpec& spec, const CriterionBinding& b,
                              const std::vector<Segment>& segs) {
  CriterionDef def;
  def.parser_id = spec.parser_id;
  def.raw_token = spec.raw_token;
  if (segs.size() != 2)
    throw CriteriaError(spec.raw_token, segs.size() > 1 ? segs[2].offset : spec.raw_token.size(),
                        "population criterion takes exactly one series segment");
  const Segment& seg = segs[1];
  if (starts_with(seg.text, "Log")) {
    auto n = parse_int(seg.text.substr(3));
    if (!n || *n < 1)
      throw CriteriaError(spec.raw_token, seg.offset, "bad Log series '" + seg.text + "'");
    def.kind = CriterionKind::population_log;
    def.geometric = true;
    for (long long v = 1; v <= *n; v *= 2) {
      def.values.push_back(numeric_point(b, static_cast<double>(v)));
      if (v > (*n) / 2) break;  // avoid overflow past the last power of two
    }
  } else if (starts_with(seg.text, "Linear")) {
    auto n = parse_int(seg.text.substr(6));
    if (!n || *n < 1)
      throw CriteriaError(spec.raw_token, seg.offset, "bad Linear series '" + seg.text + "'");
    def.kind = CriterionKind::population_linear;
    for (long long v = 1; v <= *n; ++v) def.values.push_back(numeric_point(b, static_cast<double>(v)));
  } else if (auto n = parse_int(seg.text); n && *n >= 1) {
    // bare integer segment: single-value criterion
    def.kind = CriterionKind::population_linear;
    def.values.push_back(numeric_point(b, static_cast<double>(*n)));
  } else {
    throw CriteriaError(spec.raw_token, seg.offset, "unknown series code '" + seg.text + "'");
  }
  return def;
}

CriterionDef parse_scalar_range(const CriterionSpec& spec, const CriterionBinding& b,
                                const std::vector<Segment>& segs) {
  CriterionDef def;
  def.kind = CriterionKind::scalar_range;
  def.parser_id = spec.parser_id;
  def.raw_token = spec.raw_token;
  std::optional<double> lo, hi;
  std::optional<long long> k;
  for (size_t i = 1; i < segs.size(); ++i) {
    const Segment& seg = segs[i];
    if (starts_with(seg.text, "min=")) {
      lo = decode_p_number(seg.text.substr(4));
      if (!lo) throw CriteriaError(spec.raw_token, seg.offset, "bad min value '" + seg.text + "'");
    } else if (starts_with(seg.text, "max=")) {
      hi = decode_p_number(seg.text.substr(4));
      if (!hi) throw CriteriaError(spec.raw_token, seg.offset, "bad max value '" + seg.text + "'");
    } else if (seg.text.size() > 1 && seg.text[0] == 'C') {
      k = parse_int(seg.text.substr(1));
      if (!k || *k < 1)
        throw CriteriaError(spec.raw_token, seg.offset, "bad cardinality '" + seg.text + "'");
    } else {
      throw CriteriaError(spec.raw_token, seg.offset, "unknown segment '" + seg.text + "'");
    }
  }
  if (!lo) throw CriteriaError(spec.raw_token, spec.raw_token.size(), "missing min= segment");
  if (!hi) throw CriteriaError(spec.raw_token, spec.raw_token.size(), "missing max= segment");
  if (!k) throw CriteriaError(spec.raw_token, spec.raw_token.size(), "missing C<k> segment");
  for (double v : linspace(*lo, *hi, *k)) def.values.push_back(numeric_point(b, v));
  return def;
}

CriterionDef parse_policy_set(const CriterionSpec& spec, const CriterionBinding& b,
                              const std::vector<Segment>& segs) {
  CriterionDef def;
  def.kind = CriterionKind::policy_set;
  def.parser_id = spec.parser_id;
  def.raw_token = spec.raw_token;
  if (b.universe.empty())
    throw CriteriaError(spec.raw_token, 0,
                        "policy universe for '" + spec.parser_id +
                            "' is empty; configure it in config/criteria.yaml");
  if (segs.size() < 2)
    throw CriteriaError(spec.raw_token, spec.raw_token.size(), "missing policy segment");
  std::vector<std::string> members;
  const Segment& sel = segs[1];
  if (sel.text == "all") {
    members = b.universe;
  } else {
    bool known = false;
    for (const auto& u : b.universe) known = known || u == sel.text;
    if (!known)
      throw CriteriaError(spec.raw_token, sel.offset,
                          "policy '" + sel.text + "' not in configured universe");
    members = {sel.text};
  }
  std::optional<long long> fixed_size;
  for (size_t i = 2; i < segs.size(); ++i) {
    const Segment& seg = segs[i];
    if (seg.text.size() > 1 && seg.text[0] == 'Z') {
      fixed_size = parse_int(seg.text.substr(1));
      if (!fixed_size || *fixed_size < 1)
        throw CriteriaError(spec.raw_token, seg.offset, "bad fixed size '" + seg.text + "'");
    } else {
      throw CriteriaError(spec.raw_token, seg.offset, "unknown segment '" + seg.text + "'");
    }
  }
  for (const std::string& m : members) {
    ValuePoint vp;
    vp.label = b.attr + "=" + m;
    vp.changes = {{xml::ChangeOp::set_attr, b.path, b.attr, m}};
    if (fixed_size)
      vp.changes.push_back(set_attr_change(b.z_path, b.z_attr, static_cast<double>(*fixed_size)));
    def.values.push_back(std::move(vp));
  }
  if (fixed_size) def.fixed_context["size"] = static_cast<double>(*fixed_size);
  return def;
}

CriterionDef parse_noise_levels(const CriterionSpec& spec, const CriterionBinding& b,
                                const std::vector<Segment>& segs) {
  CriterionDef def;
  def.kind = CriterionKind::noise_levels;
  def.parser_id = spec.parser_id;
  def.raw_token = spec.raw_token;
  if (segs.size() == 2) {
    // single level: "<id>.<value>"
    auto v = decode_p_number(segs[1].text);
    if (!v || *v < 0.0 || *v > 1.0)
      throw CriteriaError(spec.raw_token, segs[1].offset,
                          "bad noise level '" + segs[1].text + "' (expected 0..1 or .all.C<k>)");
    def.values.push_back(numeric_point(b, *v));
    return def;
  }
  if (segs.size() != 3 || segs[1].text != "all" || segs[2].text.empty() || segs[2].text[0] != 'C')
    throw CriteriaError(spec.raw_token, segs.size() > 1 ? segs[1].offset : 0,
                        "expected '<id>.all.C<k>' or '<id>.<level>'");
  auto k = parse_int(segs[2].text.substr(1));
  if (!k || *k < 1)
    throw CriteriaError(spec.raw_token, segs[2].offset, "bad level count '" + segs[2].text + "'");
  // k levels spread evenly over [0, 1]
  for (double v : linspace(0.0, 1.0, *k)) def.values.push_back(numeric_point(b, v));
  return def;
}

CriterionDef parse_custom_plugin(const CriterionSpec& spec, const PluginRef& ref) {
  CriterionDef def;
  def.kind = CriterionKind::custom;
  def.parser_id = spec.parser_id;
  def.raw_token = spec.raw_token;
  const YAML::Node& m = ref.manifest;
  if (m["geometric"]) def.geometric = m["geometric"].as<bool>();
  if (m["values"]) {
    for (const auto& item : m["values"]) {
      ValuePoint vp;
      vp.label = item["label"].as<std::string>();
      if (item["numeric"]) vp.numeric = item["numeric"].as<double>();
      vp.changes = changeset_from_yaml(item["changes"], "criteria plugin " + spec.parser_id);
      def.values.push_back(std::move(vp));
    }
  } else if (m["expand"]) {
    std::string cmd = m["expand"].as<std::string>();
    size_t pos = cmd.find("{token}");
    if (pos != std::string::npos) cmd.replace(pos, 7, shell_quote(spec.raw_token));
    std::string out;
    int rc = run_capture("cd " + shell_quote(ref.dir.string()) + " && " + cmd, out);
    if (rc != 0)
      throw CriteriaError(spec.raw_token, 0,
                          "criteria plugin expander failed (exit " + std::to_string(rc) + ")");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(out);
    } catch (const nlohmann::json::exception& e) {
      throw CriteriaError(spec.raw_token, 0,
                          std::string("criteria plugin expander emitted bad JSON: ") + e.what());
    }
    if (j.contains("geometric")) def.geometric = j["geometric"].get<bool>();
    if (j.contains("fixed_context"))
      for (auto& [k, v] : j["fixed_context"].items()) def.fixed_context[k] = v.get<double>();
    for (const auto& item : j.at("values")) {
      ValuePoint vp;
      vp.label = item.at("label").get<std::string>();
      if (item.contains("numeric")) vp.numeric = item["numeric"].get<double>();
      for (const auto& chj : item.value("changes", nlohmann::json::array())) {
        xml::Change ch;
        ch.op = xml::change_op_from_name(chj.value("op", "set_attr"));
        ch.path = chj.at("path").get<std::string>();
        ch.name = chj.value("attr", chj.value("name", ""));
        ch.value = chj.value("value", "");
        vp.changes.push_back(std::move(ch));
      }
      def.values.push_back(std::move(vp));
    }
  } else {
    throw CriteriaError(spec.raw_token, 0,
                        "criteria plugin '" + spec.parser_id +
                            "' declares neither inline values nor an expand command");
  }
  if (def.values.empty())
    throw CriteriaError(spec.raw_token, 0, "criteria plugin expanded to zero values");
  return def;
}

// "system100" style: a name with a trailing integer and no segments
std::optional<long long> bare_linear_count(const std::string& parser_id) {
  size_t i = parser_id.size();
  while (i > 0 && std::isdigit(static_cast<unsigned char>(parser_id[i - 1]))) --i;
  if (i == parser_id.size() || i == 0) return std::nullopt;
  return parse_int(parser_id.substr(i));
}

void check_invariants(const CriterionDef& def) {
  if (def.values.empty()) throw CriteriaError(def.raw_token, 0, "criterion expanded to no values");
  for (size_t i = 0; i < def.values.size(); ++i)
    for (size_t j = i + 1; j < def.values.size(); ++j)
      if (def.values[i].label == def.values[j].label)
        throw CriteriaError(def.raw_token, 0,
                            "duplicate value label '" + def.values[i].label + "'");
}

} // namespace

std::string ValuePoint::tick() const {
  size_t pos = label.rfind('=');
  return pos == std::string::npos ? label : label.substr(pos + 1);
}

CriterionSpec make_spec(const std::string& token) {
  if (token.empty()) throw UsageError("empty batch criteria token");
  for (char c : token)
    if (std::isspace(static_cast<unsigned char>(c)))
      throw UsageError("batch criteria token contains whitespace: '" + token + "'");
  CriterionSpec spec;
  spec.raw_token = token;
  spec.parser_id = token.substr(0, token.find('.'));
  return spec;
}

std::pair<CriterionSpec, std::optional<CriterionSpec>> tokenize_cli_criteria(
    const std::vector<std::string>& args) {
  if (args.empty()) throw UsageError("--batch-criteria requires 1 or 2 tokens, got 0");
  if (args.size() > 2)
    throw UsageError("--batch-criteria requires 1 or 2 tokens, got " +
                     std::to_string(args.size()) + " (offending argument: '" + args[2] + "')");
  CriterionSpec a = make_spec(args[0]);
  std::optional<CriterionSpec> b;
  if (args.size() == 2) b = make_spec(args[1]);
  return {a, b};
}

ParserRegistry ParserRegistry::builtin() {
  ParserRegistry reg;
  const std::string agents = "/refsim/agents";
  reg.bind({"population_size", "population", agents, "count", {}, "", ""});
  reg.bind({"n_agents", "population", agents, "count", {}, "", ""});
  reg.bind({"vel", "scalar_range", agents, "velocity", {}, "", ""});
  reg.bind({"saa_noise", "noise_levels", agents, "noise", {}, "", ""});
  reg.bind({"ta_policy_set", "policy_set", agents, "policy",
            {"alpha", "beta", "gamma"}, agents, "count"});
  return reg;
}

void ParserRegistry::bind(CriterionBinding binding) {
  if (binding.series == "policy_set") {
    if (binding.z_path.empty()) binding.z_path = binding.path;
    if (binding.z_attr.empty()) binding.z_attr = "count";
  }
  for (auto& b : bindings_) {
    if (b.id == binding.id) {
      b = std::move(binding);
      return;
    }
  }
  bindings_.push_back(std::move(binding));
}

const CriterionBinding* ParserRegistry::find(const std::string& id) const {
  for (const auto& b : bindings_)
    if (b.id == id) return &b;
  return nullptr;
}

CriterionDef parse_criterion(const CriterionSpec& spec, const ParserRegistry& registry) {
  auto segs = segments_of(spec.raw_token);
  CriterionDef def;
  if (const CriterionBinding* b = registry.find(spec.parser_id)) {
    if (b->series == "population")
      def = parse_population(spec, *b, segs);
    else if (b->series == "scalar_range")
      def = parse_scalar_range(spec, *b, segs);
    else if (b->series == "policy_set")
      def = parse_policy_set(spec, *b, segs);
    else if (b->series == "noise_levels")
      def = parse_noise_levels(spec, *b, segs);
    else
      throw ConfigError("binding for '" + spec.parser_id + "' names unknown series '" +
                        b->series + "'");
  } else if (registry.plugins() &&
             registry.plugins()->find("criteria", spec.parser_id) != nullptr) {
    def = parse_custom_plugin(spec, *registry.plugins()->find("criteria", spec.parser_id));
  } else if (auto n = bare_linear_count(spec.parser_id);
             n && segs.size() == 1 && *n >= 1) {
    // "system100" reading: a linear population sweep 1..N against the
    // default population target
    std::cerr << "[xbatch] warning: criterion '" << spec.raw_token
              << "' has no registered parser; reading the trailing integer as a 1.." << *n
              << " population sweep\n";
    CriterionBinding b{spec.parser_id, "population", "/refsim/agents", "count", {}, "", ""};
    def.kind = CriterionKind::population_linear;
    def.parser_id = spec.parser_id;
    def.raw_token = spec.raw_token;
    for (long long v = 1; v <= *n; ++v)
      def.values.push_back(numeric_point(b, static_cast<double>(v)));
  } else {
    throw CriteriaError(spec.raw_token, 0, "no parser for criterion '" + spec.parser_id + "'");
  }
  check_invariants(def);
  return def;
}

BatchCriteria parse_batch_criteria(const std::vector<std::string>& args,
                                   const ParserRegistry& registry) {
  auto [spec_a, spec_b] = tokenize_cli_criteria(args);
  BatchCriteria bc;
  bc.axis_a = parse_criterion(spec_a, registry);
  if (spec_b) {
    bc.arity = Arity::bivariate;
    bc.axis_b = parse_criterion(*spec_b, registry);
  }
  return bc;
}

std::string format_token(const CriterionDef& def) {
  auto p_last = [&]() { return encode_p_number(*def.values.back().numeric); };
  switch (def.kind) {
    case CriterionKind::population_log:
      return def.parser_id + ".Log" + fmt_double(*def.values.back().numeric);
    case CriterionKind::population_linear:
      if (def.values.size() == 1) return def.parser_id + "." + fmt_double(*def.values[0].numeric);
      return def.parser_id + ".Linear" + fmt_double(*def.values.back().numeric);
    case CriterionKind::scalar_range:
      return def.parser_id + ".min=" + encode_p_number(*def.values.front().numeric) +
             ".max=" + p_last() + ".C" + std::to_string(def.values.size());
    case CriterionKind::policy_set: {
      std::string tok = def.parser_id + ".";
      tok += def.values.size() == 1 ? def.values[0].tick() : std::string("all");
      auto it = def.fixed_context.find("size");
      if (it != def.fixed_context.end()) tok += ".Z" + fmt_double(it->second);
      return tok;
    }
    case CriterionKind::noise_levels:
      if (def.values.size() == 1) return def.parser_id + "." + encode_p_number(*def.values[0].numeric);
      return def.parser_id + ".all.C" + std::to_string(def.values.size());
    case CriterionKind::custom:
      return def.raw_token;
  }
  return def.raw_token;
}

std::vector<ExperimentPoint> expand_grid(const BatchCriteria& criteria) {
  std::vector<ExperimentPoint> out;
  const auto& a = criteria.axis_a.values;
  if (!criteria.axis_b) {
    for (size_t i = 0; i < a.size(); ++i) {
      ExperimentPoint p;
      p.index = i;
      p.row = i;
      p.col = 0;
      p.label_a = a[i].label;
      p.changes = a[i].changes;
      out.push_back(std::move(p));
    }
    return out;
  }
  const auto& b = criteria.axis_b->values;
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t j = 0; j < b.size(); ++j) {
      ExperimentPoint p;
      p.index = i * b.size() + j;
      p.row = i;
      p.col = j;
      p.label_a = a[i].label;
      p.label_b = b[j].label;
      p.changes = a[i].changes;
      p.changes.insert(p.changes.end(), b[j].changes.begin(), b[j].changes.end());
      std::string conflict = xml::find_conflict(p.changes);
      if (!conflict.empty())
        throw Error("bivariate axes both write '" + conflict + "' with different values (" +
                    p.label_a + " x " + p.label_b + ")");
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::string encode_p_number(double v) {
  std::string s = fmt_double(v);
  for (char& c : s)
    if (c == '.') c = 'p';
  return s;
}

std::optional<double> decode_p_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::string plain = s;
  for (char& c : plain)
    if (c == 'p') c = '.';
  return parse_double(plain);
}

} // namespace xbatch
