#ifndef XBATCH_PIPELINE_HPP
#define XBATCH_PIPELINE_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xbatch/compare.hpp"
#include "xbatch/criteria.hpp"
#include "xbatch/exec.hpp"
#include "xbatch/expgen.hpp"
#include "xbatch/plot.hpp"
#include "xbatch/stats.hpp"

namespace xbatch {

// Everything the CLI accepts, in parsed form.
struct Invocation {
  std::optional<std::string> template_input_file;
  std::string platform = "platform.refsim";
  std::optional<std::string> project;
  std::vector<std::string> batch_criteria;
  std::optional<std::string> controller;
  std::optional<std::string> robot;
  std::optional<std::string> scenario;
  std::optional<std::string> exp_setup;
  size_t n_runs = 1;
  std::vector<int> pipeline;  // empty: default applies
  std::optional<std::string> exp_range;
  std::string exec_env = "hpc.local";
  std::optional<int> exec_jobs_per_node;
  std::optional<std::string> nodefile;
  bool exec_dry_run = false;
  int retry = 0;
  std::string storage_medium = "storage.csv";
  std::string dist_stats = "conf95";
  std::string reducer = "final";
  bool platform_vc = false;
  std::string render_cmd_opts;
  bool render_exec = false;
  std::vector<std::string> compare;  // batch roots
  std::optional<std::string> compare_mode;
  std::optional<std::string> compare_target;
  std::optional<std::string> as_lines;
  std::optional<std::string> compare_output_root;
  std::vector<std::string> compare_models;
  bool compare_diff = false;
  bool force_regen = false;
  std::string sierra_root = "./xbatch-root";
  std::optional<std::uint64_t> master_seed;
  bool no_master_node = false;
  std::string flags_snapshot;
};

// Validated stage selection plus resolved context; construction performs the
// flag and on-disk prerequisite checks.
struct PipelinePlan {
  std::vector<int> stages;
  Invocation opts;
  BatchPaths paths;  // meaningful for stages 1-4
  bool has_batch_stages = false;
};

PipelinePlan plan_pipeline(const Invocation& opts);

// Runs the selected stages in order; a stage failure halts the rest.
// Returns the process exit code.
int run_pipeline(const PipelinePlan& plan);

// Project configuration directory: ./<name>, then <entry>/<name> for each
// plugin path entry. Empty when the project has no directory.
fs::path find_project_dir(const std::string& project);

// Built-in registry extended by <project>/config/criteria.yaml, when present.
ParserRegistry project_registry(const fs::path& project_dir, const PluginSet& plugins);

} // namespace xbatch

#endif
