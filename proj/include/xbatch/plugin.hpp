#ifndef XBATCH_PLUGIN_HPP
#define XBATCH_PLUGIN_HPP

#include <optional>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "xbatch/xml.hpp"

namespace xbatch {

// A discovered plugin directory: <entry>/<subdir>/plugin.yaml with at least
// {type, id}. Resolution is manifest-only; nothing is executed here.
struct PluginRef {
  std::string type;
  std::string id;
  fs::path dir;
  YAML::Node manifest;
};

class PluginSet {
public:
  PluginSet() = default;

  // path entries are scanned in order; first match wins on lookup
  static PluginSet scan(const std::vector<fs::path>& path_entries);
  // reads the colon-separated XBATCH_PLUGIN_PATH variable
  static PluginSet from_env();

  const PluginRef* find(const std::string& type, const std::string& id) const;
  std::vector<const PluginRef*> all(const std::string& type) const;

private:
  std::vector<PluginRef> plugins_;
};

// Platform contract: how to launch one run and how experiment setup lands in
// the input XML. Decouples generation/execution from the simulator.
struct PlatformPlugin {
  std::string id;
  std::string launch_template;  // must use {input} and {seed} exactly once each
  std::string seed_path;        // XML element that receives the seed
  std::string seed_attr;
  int default_hz = 10;
  // applied to every run's tree; values may use {duration_s}, {hz}, {ticks}
  xml::AttributeChangeSet setup_changes;
  // applied only under --platform-vc
  xml::AttributeChangeSet vc_changes;
  std::vector<std::string> output_tables;     // time-series stems
  std::vector<std::string> output_snapshots;  // per-snapshot matrix stems

  void validate() const;
};

// Built-in id: platform.refsim. Anything else is searched on the plugin path
// (type: platform).
PlatformPlugin resolve_platform(const std::string& id, const PluginSet& plugins);

// Model plugins produce a predicted series aligned to an empirical one via a
// file contract: `exec` gets {input} (empirical CSV x,y) and {output} paths.
struct ModelPlugin {
  std::string id;
  std::string scope;  // inter_exp | intra_exp
  std::string exec;
  fs::path dir;
};

ModelPlugin resolve_model(const std::string& id, const PluginSet& plugins);

// Parse a changeset list from YAML: [{op, path, attr|name, value}, ...]
xml::AttributeChangeSet changeset_from_yaml(const YAML::Node& node, const std::string& what);

} // namespace xbatch

#endif
