#ifndef XBATCH_EXEC_HPP
#define XBATCH_EXEC_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xbatch/expgen.hpp"
#include "xbatch/plugin.hpp"

namespace xbatch {

// Inclusive experiment index range (--exp-range L:H).
struct ExpRange {
  size_t lo = 0;
  size_t hi = 0;

  size_t count() const { return hi - lo + 1; }
};

ExpRange parse_exp_range(const std::optional<std::string>& text, size_t cardinality);

// One GNU-parallel style jobfile: one independent shell line per run. Lines
// are relative to the batch root so the file is machine-portable.
struct CommandFile {
  size_t exp = 0;
  std::vector<std::string> lines;

  std::string text() const;
};

CommandFile generate_command_file(const BatchPaths& paths, const PlatformPlugin& platform,
                                  const SeedTable& seeds, size_t exp, size_t n_runs);

struct NodeSpec {
  std::string host;  // empty: run locally
  int slots = 1;     // concurrent runs on this node
};

// Where and how command lines run; never what they do.
struct ExecEnvAdapter {
  std::string id;
  std::vector<NodeSpec> nodes;
  // wraps a command for remote execution; {host} and {cmd} placeholders;
  // empty template means direct local spawn
  std::string remote_shell;
  std::string job_id;  // scheduler job id when running inside an allocation

  int total_slots() const;
};

struct AdapterOptions {
  std::optional<int> jobs_per_node;  // --exec-jobs-per-node
  std::optional<fs::path> nodefile;  // --nodefile (hpc.adhoc)
};

ExecEnvAdapter adapter_local(const AdapterOptions& opts);
ExecEnvAdapter adapter_slurm(const AdapterOptions& opts);
ExecEnvAdapter adapter_pbs(const AdapterOptions& opts);
ExecEnvAdapter adapter_adhoc(const AdapterOptions& opts);
ExecEnvAdapter make_adapter(const std::string& id, const AdapterOptions& opts);

// SLURM hostlist grammar: "n[01-03,07],m2" -> n01 n02 n03 n07 m2.
std::vector<std::string> expand_hostlist(const std::string& hostlist);

// sbatch/qsub script that re-invokes the given command with the requested
// resources; emission only, never submitted on the user's behalf.
struct SubmitSpec {
  std::string job_name = "xbatch";
  int nodes = 1;
  std::string walltime = "01:00:00";
  int jobs_per_node = 1;
  std::string command;
};

std::string emit_submit_script_slurm(const SubmitSpec& spec);
std::string emit_submit_script_pbs(const SubmitSpec& spec);

// Fully resolved dispatch: every run of every selected experiment with its
// core command (adapter-independent) and wrapped command (adapter-specific).
struct PlanEntry {
  size_t exp = 0;
  size_t run = 0;
  std::string host;
  std::string core;
  std::string wrapped;
};

struct DispatchPlan {
  std::string env_id;
  std::string job_id;
  int parallelism = 1;  // concurrent runs within one experiment
  std::vector<PlanEntry> entries;

  std::string text() const;  // printable --exec-dry-run form
};

// Side-effect free: reads stage-1 outputs, touches nothing.
DispatchPlan build_plan(const BatchPaths& paths, const PlatformPlugin& platform,
                        const SeedTable& seeds, const BatchManifest& manifest,
                        const ExecEnvAdapter& adapter, const ExpRange& range);

struct RunResult {
  size_t run = 0;
  int exit_code = 0;
  double wall_ms = 0.0;
  int attempts = 1;
};

struct ExecResult {
  size_t exp = 0;
  size_t ok_count = 0;
  size_t fail_count = 0;
  std::vector<RunResult> runs;
};

void save_exec_result(const fs::path& file, const ExecResult& result);
ExecResult load_exec_result(const fs::path& file);

// Stage 2: experiments sequentially in index order, runs within an
// experiment concurrently up to the adapter's slot budget. A failing run
// never aborts its experiment.
std::vector<ExecResult> run_batch(const BatchPaths& paths, const PlatformPlugin& platform,
                                  const SeedTable& seeds, const BatchManifest& manifest,
                                  const ExecEnvAdapter& adapter, const ExpRange& range,
                                  int retries);

} // namespace xbatch

#endif
