#include "xbatch/expgen.hpp"

#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace xbatch {

namespace {

std::string iso_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string substitute(std::string s, const std::map<std::string, std::string>& vars) {
  for (const auto& [k, v] : vars) {
    std::string ph = "{" + k + "}";
    for (size_t pos = s.find(ph); pos != std::string::npos; pos = s.find(ph, pos))
      s.replace(pos, ph.size(), v);
  }
  return s;
}

xml::AttributeChangeSet substitute_changes(const xml::AttributeChangeSet& cs,
                                           const std::map<std::string, std::string>& vars) {
  xml::AttributeChangeSet out = cs;
  for (xml::Change& ch : out) ch.value = substitute(ch.value, vars);
  return out;
}

YAML::Node axis_to_yaml(const AxisInfo& a) {
  YAML::Node n;
  n["token"] = a.token;
  n["name"] = a.name;
  n["geometric"] = a.geometric;
  for (const auto& l : a.labels) n["labels"].push_back(l);
  for (double v : a.numerics)
    n["numerics"].push_back(std::isnan(v) ? std::string("~") : fmt_double(v));
  return n;
}

AxisInfo axis_from_yaml(const YAML::Node& n) {
  AxisInfo a;
  a.token = n["token"].as<std::string>();
  a.name = n["name"].as<std::string>();
  a.geometric = n["geometric"].as<bool>();
  if (n["labels"])
    for (const auto& l : n["labels"]) a.labels.push_back(l.as<std::string>());
  if (n["numerics"]) {
    for (const auto& v : n["numerics"]) {
      std::string s = v.as<std::string>();
      a.numerics.push_back(s == "~" ? std::nan("") : parse_double(s).value_or(std::nan("")));
    }
  }
  return a;
}

} // namespace

ExpSetup parse_exp_setup(const std::string& token) {
  if (!starts_with(token, "exp_setup."))
    throw UsageError("--exp-setup must start with 'exp_setup.': '" + token + "'");
  ExpSetup setup;
  bool have_t = false;
  auto segs = split(token, '.');
  for (size_t i = 1; i < segs.size(); ++i) {
    const std::string& seg = segs[i];
    if (seg.empty()) throw UsageError("empty segment in --exp-setup token '" + token + "'");
    if (seg[0] == 'T') {
      auto v = parse_int(seg.substr(1));
      if (!v || *v < 1) throw UsageError("bad duration segment '" + seg + "' in '" + token + "'");
      setup.duration_s = static_cast<int>(*v);
      have_t = true;
    } else if (seg[0] == 'K') {
      auto v = parse_int(seg.substr(1));
      if (!v || *v < 1) throw UsageError("bad tick-rate segment '" + seg + "' in '" + token + "'");
      setup.controller_hz = static_cast<int>(*v);
    } else {
      throw UsageError("unknown segment '" + seg + "' in --exp-setup token '" + token + "'");
    }
  }
  if (!have_t) throw UsageError("--exp-setup token '" + token + "' missing required T<seconds>");
  return setup;
}

std::uint64_t seed_for(std::uint64_t master, std::uint64_t exp, std::uint64_t run) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ (exp + 1));
  h = splitmix64(h ^ (run + 1));
  return h;
}

SeedTable SeedTable::generate(std::uint64_t master, size_t cardinality, size_t n_runs) {
  if (cardinality < 1 || n_runs < 1)
    throw Error("seed table needs cardinality >= 1 and n_runs >= 1");
  SeedTable table;
  table.master_seed = master;
  std::set<std::uint64_t> seen;
  for (size_t e = 0; e < cardinality; ++e) {
    std::vector<std::uint64_t> row;
    for (size_t r = 0; r < n_runs; ++r) {
      std::uint64_t s = seed_for(master, e, r);
      while (!seen.insert(s).second) s = splitmix64(s);
      row.push_back(s);
    }
    table.seeds.push_back(std::move(row));
  }
  return table;
}

SeedTable SeedTable::load(const fs::path& file) {
  YAML::Node doc;
  try {
    doc = YAML::LoadFile(file.string());
  } catch (const YAML::Exception& e) {
    throw Error("cannot read seed table " + file.string() + ": " + e.what());
  }
  SeedTable table;
  table.master_seed = doc["master_seed"].as<std::uint64_t>();
  for (const auto& row : doc["seeds"]) {
    std::vector<std::uint64_t> seeds;
    for (const auto& s : row) seeds.push_back(s.as<std::uint64_t>());
    table.seeds.push_back(std::move(seeds));
  }
  return table;
}

void SeedTable::save(const fs::path& file) const {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "master_seed" << YAML::Value << master_seed;
  out << YAML::Key << "experiments" << YAML::Value << cardinality();
  out << YAML::Key << "n_runs" << YAML::Value << n_runs();
  out << YAML::Key << "seeds" << YAML::Value << YAML::BeginSeq;
  for (const auto& row : seeds) {
    out << YAML::Flow << YAML::BeginSeq;
    for (std::uint64_t s : row) out << s;
    out << YAML::EndSeq;
  }
  out << YAML::EndSeq << YAML::EndMap;
  write_file_atomic(file, std::string(out.c_str()) + "\n");
}

SeedTable assign_seeds(const fs::path& file, std::uint64_t master, size_t cardinality,
                       size_t n_runs, bool force_regen) {
  if (fs::exists(file) && !force_regen) {
    SeedTable table = SeedTable::load(file);
    if (table.cardinality() != cardinality || table.n_runs() != n_runs)
      throw Error("existing " + file.string() + " holds " + std::to_string(table.cardinality()) +
                  "x" + std::to_string(table.n_runs()) + " seeds but the batch needs " +
                  std::to_string(cardinality) + "x" + std::to_string(n_runs) +
                  "; pass --force-regen to regenerate");
    return table;
  }
  SeedTable table = SeedTable::generate(master, cardinality, n_runs);
  table.save(file);
  return table;
}

std::string criteria_slug(const std::vector<std::string>& tokens) {
  std::string joined = join(tokens, "+");
  std::string out;
  for (char c : joined) {
    bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '=' ||
              c == '+' || c == '-';
    out += ok ? c : '_';
  }
  return out;
}

BatchPaths batch_paths(const fs::path& sierra_root, const std::string& project,
                       const std::vector<std::string>& criteria_tokens) {
  return BatchPaths{sierra_root / project / criteria_slug(criteria_tokens)};
}

AxisInfo axis_info(const CriterionDef& def) {
  AxisInfo a;
  a.token = format_token(def);
  a.name = def.parser_id;
  a.geometric = def.geometric;
  for (const ValuePoint& vp : def.values) {
    a.labels.push_back(vp.label);
    a.numerics.push_back(vp.numeric.value_or(std::nan("")));
  }
  return a;
}

std::vector<std::string> BatchManifest::criteria_tokens() const {
  std::vector<std::string> out;
  for (const AxisInfo& a : axes) out.push_back(a.token);
  return out;
}

void BatchManifest::save(const fs::path& file) const {
  YAML::Node doc;
  doc["schema"] = schema;
  doc["project"] = project;
  doc["platform"] = platform_id;
  doc["exec_env"] = exec_env;
  doc["scenario"] = scenario;
  doc["controller"] = controller;
  doc["robot"] = robot;
  for (const AxisInfo& a : axes) doc["axes"].push_back(axis_to_yaml(a));
  doc["cardinality"] = cardinality;
  doc["rows"] = rows;
  doc["cols"] = cols;
  doc["n_runs"] = n_runs;
  doc["exp_setup"]["duration_s"] = setup.duration_s;
  if (setup.controller_hz) doc["exp_setup"]["controller_hz"] = *setup.controller_hz;
  doc["resolved_hz"] = resolved_hz;
  doc["master_seed"] = master_seed;
  doc["platform_vc"] = platform_vc;
  doc["created"] = created;
  doc["flags"] = flags;
  YAML::Emitter out;
  out << doc;
  write_file_atomic(file, std::string(out.c_str()) + "\n");
}

BatchManifest BatchManifest::load(const fs::path& file) {
  if (!fs::exists(file)) throw Error("no batch manifest at " + file.string() + " (run stage 1?)");
  YAML::Node doc;
  try {
    doc = YAML::LoadFile(file.string());
  } catch (const YAML::Exception& e) {
    throw Error("cannot read manifest " + file.string() + ": " + e.what());
  }
  BatchManifest m;
  m.schema = doc["schema"].as<int>();
  m.project = doc["project"].as<std::string>();
  m.platform_id = doc["platform"].as<std::string>();
  m.exec_env = doc["exec_env"].as<std::string>();
  m.scenario = doc["scenario"].as<std::string>();
  m.controller = doc["controller"].as<std::string>();
  m.robot = doc["robot"].as<std::string>();
  for (const auto& a : doc["axes"]) m.axes.push_back(axis_from_yaml(a));
  m.cardinality = doc["cardinality"].as<size_t>();
  m.rows = doc["rows"].as<size_t>();
  m.cols = doc["cols"].as<size_t>();
  m.n_runs = doc["n_runs"].as<size_t>();
  m.setup.duration_s = doc["exp_setup"]["duration_s"].as<int>();
  if (doc["exp_setup"]["controller_hz"])
    m.setup.controller_hz = doc["exp_setup"]["controller_hz"].as<int>();
  m.resolved_hz = doc["resolved_hz"].as<int>();
  m.master_seed = doc["master_seed"].as<std::uint64_t>();
  m.platform_vc = doc["platform_vc"].as<bool>();
  m.created = doc["created"].as<std::string>();
  m.flags = doc["flags"].as<std::string>();
  return m;
}

ExtraChanges extra_changes_from_yaml(const fs::path& file, const std::string& key) {
  ExtraChanges extra;
  if (!fs::exists(file))
    throw ConfigError("no configuration file " + file.string() + " (needed for '" + key + "')");
  YAML::Node doc;
  try {
    doc = YAML::LoadFile(file.string());
  } catch (const YAML::Exception& e) {
    throw ConfigError("cannot read " + file.string() + ": " + e.what());
  }
  YAML::Node entry = doc[key];
  if (!entry)
    throw ConfigError(file.string() + " has no entry for '" + key + "'");
  if (entry.IsSequence()) {
    extra.common = changeset_from_yaml(entry, key);
    return extra;
  }
  for (const auto& kv : entry) {
    std::string subkey = kv.first.as<std::string>();
    if (subkey == "common") {
      extra.common = changeset_from_yaml(kv.second, key);
    } else if (starts_with(subkey, "exp")) {
      auto idx = parse_int(subkey.substr(3));
      if (!idx || *idx < 0)
        throw ConfigError(file.string() + ": bad per-experiment key '" + subkey + "'");
      extra.per_exp[static_cast<size_t>(*idx)] = changeset_from_yaml(kv.second, key);
    } else {
      throw ConfigError(file.string() + ": unknown key '" + subkey + "' under '" + key + "'");
    }
  }
  return extra;
}

BatchManifest generate_batch(const BatchPaths& paths, const GenSpec& spec) {
  spec.platform.validate();
  std::vector<ExperimentPoint> grid = expand_grid(spec.criteria);
  if (spec.n_runs < 1) throw UsageError("--n-runs must be >= 1");

  xml::Element tmpl = xml::parse_file(spec.template_file);

  int hz = spec.setup.controller_hz.value_or(spec.platform.default_hz);
  long long ticks = static_cast<long long>(spec.setup.duration_s) * hz;
  std::map<std::string, std::string> vars = {
      {"duration_s", std::to_string(spec.setup.duration_s)},
      {"hz", std::to_string(hz)},
      {"ticks", std::to_string(ticks)},
  };
  xml::AttributeChangeSet platform_changes = substitute_changes(spec.platform.setup_changes, vars);
  if (spec.platform_vc) {
    auto vc = substitute_changes(spec.platform.vc_changes, vars);
    platform_changes.insert(platform_changes.end(), vc.begin(), vc.end());
  }

  fs::create_directories(paths.root);
  SeedTable seeds = assign_seeds(paths.seeds_file(), spec.master_seed, grid.size(), spec.n_runs,
                                 spec.force_regen);

  // stage everything in a temp sibling, rename over exp-inputs on success
  fs::path staging = paths.root / ".exp-inputs.staging";
  fs::remove_all(staging);
  try {
    for (const ExperimentPoint& point : grid) {
      xml::AttributeChangeSet exp_changes = point.changes;
      exp_changes.insert(exp_changes.end(), platform_changes.begin(), platform_changes.end());
      xml::AttributeChangeSet user_changes;
      for (const ExtraChanges& extra : spec.extras) {
        user_changes.insert(user_changes.end(), extra.common.begin(), extra.common.end());
        auto it = extra.per_exp.find(point.index);
        if (it != extra.per_exp.end())
          user_changes.insert(user_changes.end(), it->second.begin(), it->second.end());
      }
      xml::AttributeChangeSet merged = exp_changes;
      merged.insert(merged.end(), user_changes.begin(), user_changes.end());
      std::string conflict = xml::find_conflict(merged);
      if (!conflict.empty())
        throw Error("conflicting writes to '" + conflict + "' in " + point.dir_name());

      xml::Element exp_tree = xml::apply_changeset(tmpl, exp_changes);
      for (size_t r = 0; r < spec.n_runs; ++r) {
        // the seed lands before the user changes; user config keeps the
        // last word over the whole tree
        xml::AttributeChangeSet run_changes = {
            {xml::ChangeOp::set_attr, spec.platform.seed_path, spec.platform.seed_attr,
             std::to_string(seeds.seeds[point.index][r])}};
        run_changes.insert(run_changes.end(), user_changes.begin(), user_changes.end());
        xml::Element run_tree = xml::apply_changeset(exp_tree, run_changes);
        fs::path dir = staging / point.dir_name() / ("run" + std::to_string(r));
        fs::create_directories(dir);
        write_file_atomic(dir / "input.xml", xml::serialize(run_tree));
      }
    }
  } catch (...) {
    fs::remove_all(staging);
    throw;
  }

  fs::remove_all(paths.exp_inputs());
  fs::rename(staging, paths.exp_inputs());

  BatchManifest m;
  m.project = spec.project;
  m.platform_id = spec.platform.id;
  m.exec_env = spec.exec_env;
  m.scenario = spec.scenario;
  m.controller = spec.controller;
  m.robot = spec.robot;
  m.axes.push_back(axis_info(spec.criteria.axis_a));
  if (spec.criteria.axis_b) m.axes.push_back(axis_info(*spec.criteria.axis_b));
  m.cardinality = grid.size();
  m.rows = spec.criteria.axis_a.values.size();
  m.cols = spec.criteria.axis_b ? spec.criteria.axis_b->values.size() : 1;
  m.n_runs = spec.n_runs;
  m.setup = spec.setup;
  m.resolved_hz = hz;
  m.master_seed = seeds.master_seed;
  m.platform_vc = spec.platform_vc;
  m.created = iso_now();
  m.flags = spec.flags;
  m.save(paths.manifest_file());
  return m;
}

} // namespace xbatch
