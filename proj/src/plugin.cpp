#include "xbatch/plugin.hpp"

#include <algorithm>

namespace xbatch {

PluginSet PluginSet::scan(const std::vector<fs::path>& path_entries) {
  PluginSet set;
  for (const fs::path& entry : path_entries) {
    if (!fs::is_directory(entry)) continue;
    std::vector<fs::path> subdirs;
    for (const auto& de : fs::directory_iterator(entry))
      if (de.is_directory()) subdirs.push_back(de.path());
    std::sort(subdirs.begin(), subdirs.end());
    for (const fs::path& dir : subdirs) {
      fs::path manifest_path = dir / "plugin.yaml";
      if (!fs::exists(manifest_path)) continue;
      YAML::Node manifest;
      try {
        manifest = YAML::LoadFile(manifest_path.string());
      } catch (const YAML::Exception& e) {
        throw ConfigError("bad plugin manifest " + manifest_path.string() + ": " + e.what());
      }
      if (!manifest["type"] || !manifest["id"])
        throw ConfigError("plugin manifest " + manifest_path.string() +
                          " missing required keys {type, id}");
      PluginRef ref;
      ref.type = manifest["type"].as<std::string>();
      ref.id = manifest["id"].as<std::string>();
      ref.dir = dir;
      ref.manifest = manifest;
      set.plugins_.push_back(std::move(ref));
    }
  }
  return set;
}

PluginSet PluginSet::from_env() {
  std::vector<fs::path> entries;
  for (const std::string& part : split(getenv_or("XBATCH_PLUGIN_PATH", ""), ':'))
    if (!part.empty()) entries.emplace_back(part);
  return scan(entries);
}

const PluginRef* PluginSet::find(const std::string& type, const std::string& id) const {
  for (const PluginRef& p : plugins_)
    if (p.type == type && p.id == id) return &p;
  return nullptr;
}

std::vector<const PluginRef*> PluginSet::all(const std::string& type) const {
  std::vector<const PluginRef*> out;
  for (const PluginRef& p : plugins_)
    if (p.type == type) out.push_back(&p);
  return out;
}

namespace {

size_t count_placeholder(const std::string& s, const std::string& ph) {
  size_t n = 0;
  for (size_t pos = s.find(ph); pos != std::string::npos; pos = s.find(ph, pos + ph.size())) ++n;
  return n;
}

std::vector<std::string> string_list(const YAML::Node& node) {
  std::vector<std::string> out;
  if (!node) return out;
  for (const auto& item : node) out.push_back(item.as<std::string>());
  return out;
}

PlatformPlugin refsim_platform() {
  PlatformPlugin p;
  p.id = "platform.refsim";
  p.launch_template = "refsim --input {input} --seed {seed}";
  p.seed_path = "/refsim/seed";
  p.seed_attr = "value";
  p.default_hz = 10;
  p.setup_changes = {{xml::ChangeOp::set_attr, "/refsim/time", "ticks", "{ticks}"}};
  p.output_tables = {"collected"};
  p.output_snapshots = {"spatial"};
  return p;
}

} // namespace

void PlatformPlugin::validate() const {
  if (count_placeholder(launch_template, "{input}") != 1 ||
      count_placeholder(launch_template, "{seed}") != 1)
    throw ConfigError("platform " + id +
                      ": launch_template must contain {input} and {seed} exactly once");
  if (output_tables.empty() && output_snapshots.empty())
    throw ConfigError("platform " + id + ": no declared output stems");
  if (seed_path.empty() || seed_attr.empty())
    throw ConfigError("platform " + id + ": seed injection point not declared");
  if (default_hz < 1) throw ConfigError("platform " + id + ": default_hz must be >= 1");
}

xml::AttributeChangeSet changeset_from_yaml(const YAML::Node& node, const std::string& what) {
  xml::AttributeChangeSet cs;
  if (!node) return cs;
  if (!node.IsSequence()) throw ConfigError(what + ": changes must be a list");
  for (const auto& item : node) {
    xml::Change ch;
    ch.op = item["op"] ? xml::change_op_from_name(item["op"].as<std::string>())
                       : xml::ChangeOp::set_attr;
    if (!item["path"]) throw ConfigError(what + ": change missing 'path'");
    ch.path = item["path"].as<std::string>();
    if (item["attr"]) ch.name = item["attr"].as<std::string>();
    if (item["name"]) ch.name = item["name"].as<std::string>();
    if (item["value"]) ch.value = item["value"].as<std::string>();
    if (ch.op == xml::ChangeOp::set_attr && ch.name.empty())
      throw ConfigError(what + ": set_attr change missing 'attr'");
    if (ch.op == xml::ChangeOp::add_elem && ch.name.empty())
      throw ConfigError(what + ": add_elem change missing 'name'");
    cs.push_back(std::move(ch));
  }
  return cs;
}

PlatformPlugin resolve_platform(const std::string& id, const PluginSet& plugins) {
  if (id == "platform.refsim") {
    PlatformPlugin p = refsim_platform();
    p.validate();
    return p;
  }
  const PluginRef* ref = plugins.find("platform", id);
  if (!ref)
    throw ConfigError("platform '" + id +
                      "' not found (built-ins: platform.refsim; searched XBATCH_PLUGIN_PATH=" +
                      getenv_or("XBATCH_PLUGIN_PATH", "<unset>") + ")");
  const YAML::Node& m = ref->manifest;
  PlatformPlugin p;
  p.id = id;
  try {
    if (!m["launch_template"])
      throw ConfigError("platform manifest " + ref->dir.string() + ": missing launch_template");
    p.launch_template = m["launch_template"].as<std::string>();
    if (m["seed_path"]) p.seed_path = m["seed_path"].as<std::string>();
    if (m["seed_attr"]) p.seed_attr = m["seed_attr"].as<std::string>();
    if (m["default_hz"]) p.default_hz = m["default_hz"].as<int>();
    p.setup_changes = changeset_from_yaml(m["setup_changes"], "platform " + id);
    p.vc_changes = changeset_from_yaml(m["vc_changes"], "platform " + id);
    p.output_tables = string_list(m["output_tables"]);
    p.output_snapshots = string_list(m["output_snapshots"]);
  } catch (const YAML::Exception& e) {
    throw ConfigError("platform manifest " + ref->dir.string() + ": " + e.what());
  }
  p.validate();
  return p;
}

ModelPlugin resolve_model(const std::string& id, const PluginSet& plugins) {
  const PluginRef* ref = plugins.find("model", id);
  if (!ref) throw ConfigError("model '" + id + "' not found on the plugin path");
  const YAML::Node& m = ref->manifest;
  ModelPlugin mp;
  mp.id = id;
  mp.dir = ref->dir;
  mp.scope = m["scope"] ? m["scope"].as<std::string>() : "inter_exp";
  if (!m["exec"]) throw ConfigError("model manifest " + ref->dir.string() + ": missing exec");
  mp.exec = m["exec"].as<std::string>();
  if (mp.exec.find("{input}") == std::string::npos ||
      mp.exec.find("{output}") == std::string::npos)
    throw ConfigError("model " + id + ": exec must use {input} and {output} placeholders");
  return mp;
}

} // namespace xbatch
