#ifndef XBATCH_EXPGEN_HPP
#define XBATCH_EXPGEN_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xbatch/criteria.hpp"
#include "xbatch/plugin.hpp"
#include "xbatch/xml.hpp"

namespace xbatch {

// --exp-setup token: duration in seconds plus optional controller tick rate.
struct ExpSetup {
  int duration_s = 0;
  std::optional<int> controller_hz;

  bool operator==(const ExpSetup&) const = default;
};

// "exp_setup.T1000.K100" -> {1000 s, 100 Hz}; K is optional, T is not.
ExpSetup parse_exp_setup(const std::string& token);

// Per-run seeds derived from one master seed. seed_for is the documented
// hash; generate() additionally guarantees distinct seeds across the table.
std::uint64_t seed_for(std::uint64_t master, std::uint64_t exp, std::uint64_t run);

struct SeedTable {
  std::uint64_t master_seed = 0;
  std::vector<std::vector<std::uint64_t>> seeds;  // [experiment][run]

  size_t cardinality() const { return seeds.size(); }
  size_t n_runs() const { return seeds.empty() ? 0 : seeds[0].size(); }

  static SeedTable generate(std::uint64_t master, size_t cardinality, size_t n_runs);
  static SeedTable load(const fs::path& file);
  void save(const fs::path& file) const;
};

// Load-or-create against seeds.yaml: an existing file wins unless
// force_regen; dimension mismatch is an error telling the user about
// --force-regen.
SeedTable assign_seeds(const fs::path& file, std::uint64_t master, size_t cardinality,
                       size_t n_runs, bool force_regen);

// Fixed on-disk shape of one batch experiment.
struct BatchPaths {
  fs::path root;

  fs::path exp_inputs() const { return root / "exp-inputs"; }
  fs::path exp_outputs() const { return root / "exp-outputs"; }
  fs::path statistics() const { return root / "statistics"; }
  fs::path graphs() const { return root / "graphs"; }
  fs::path videos() const { return root / "videos"; }
  fs::path models() const { return root / "models"; }
  fs::path manifest_file() const { return root / "manifest.yaml"; }
  fs::path seeds_file() const { return root / "seeds.yaml"; }
  fs::path events_file() const { return root / "events.jsonl"; }

  fs::path input_dir(size_t exp) const { return exp_inputs() / ("exp" + std::to_string(exp)); }
  fs::path run_input(size_t exp, size_t run) const {
    return input_dir(exp) / ("run" + std::to_string(run)) / "input.xml";
  }
  fs::path output_dir(size_t exp) const { return exp_outputs() / ("exp" + std::to_string(exp)); }
  fs::path run_output_dir(size_t exp, size_t run) const {
    return output_dir(exp) / ("run" + std::to_string(run));
  }
  fs::path stats_dir(size_t exp) const { return statistics() / ("exp" + std::to_string(exp)); }
};

// <sierra-root>/<project>/<criteria-slug>
BatchPaths batch_paths(const fs::path& sierra_root, const std::string& project,
                       const std::vector<std::string>& criteria_tokens);
std::string criteria_slug(const std::vector<std::string>& tokens);

struct AxisInfo {
  std::string token;
  std::string name;
  bool geometric = false;
  std::vector<std::string> labels;
  std::vector<double> numerics;  // NaN where a value has no numeric reading

  bool operator==(const AxisInfo&) const = default;
};

AxisInfo axis_info(const CriterionDef& def);

// Self-describing record of how a batch was generated; everything stage 3-5
// needs without re-parsing criteria.
struct BatchManifest {
  int schema = 1;
  std::string project;
  std::string platform_id;
  std::string exec_env;
  std::string scenario;
  std::string controller;
  std::string robot;
  std::vector<AxisInfo> axes;
  size_t cardinality = 0;
  size_t rows = 0;
  size_t cols = 0;
  size_t n_runs = 0;
  ExpSetup setup;
  int resolved_hz = 0;
  std::uint64_t master_seed = 0;
  bool platform_vc = false;
  std::string created;  // ISO-8601, informational only
  std::string flags;    // CLI invocation snapshot

  bool bivariate() const { return axes.size() == 2; }
  std::vector<std::string> criteria_tokens() const;

  void save(const fs::path& file) const;
  static BatchManifest load(const fs::path& file);

  bool operator==(const BatchManifest&) const = default;
};

// Batch-wide and per-experiment template modifications from user YAML
// (--controller / --robot routing).
struct ExtraChanges {
  xml::AttributeChangeSet common;
  std::map<size_t, xml::AttributeChangeSet> per_exp;
};

// Reads one key of a controllers.yaml/robots.yaml style file. The value is
// either a plain change list (batch-wide) or a map {common: [...],
// exp<i>: [...]}.
ExtraChanges extra_changes_from_yaml(const fs::path& file, const std::string& key);

struct GenSpec {
  fs::path template_file;
  BatchCriteria criteria;
  size_t n_runs = 1;
  ExpSetup setup;
  PlatformPlugin platform;
  std::vector<ExtraChanges> extras;  // controller, robot, ... in apply order
  bool platform_vc = false;
  std::uint64_t master_seed = 0;
  bool force_regen = false;

  // manifest context
  std::string project;
  std::string exec_env = "hpc.local";
  std::string scenario;
  std::string controller;
  std::string robot;
  std::string flags;
};

// Stage 1. Writes exp-inputs (staged in a temp dir, renamed on success),
// seeds.yaml, and manifest.yaml under paths.root.
BatchManifest generate_batch(const BatchPaths& paths, const GenSpec& spec);

} // namespace xbatch

#endif
