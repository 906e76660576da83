#include <doctest.h>

#include <cstdlib>
#include <random>
#include <thread>

#include "helpers.hpp"
#include "oracle.hpp"
#include "xbatch/exec.hpp"

using namespace xbatch;
using testutil::TempDir;

namespace {

// a generated refsim batch rooted in tmp
BatchPaths make_batch(const TempDir& tmp, const std::string& token, size_t n_runs,
                      const std::string& name = "root") {
  testutil::write_file(tmp / "exp.xml", testutil::refsim_template);
  GenSpec spec;
  spec.template_file = tmp / "exp.xml";
  spec.criteria.axis_a = parse_criterion(make_spec(token), ParserRegistry::builtin());
  spec.n_runs = n_runs;
  spec.setup = parse_exp_setup("exp_setup.T20.K1");
  spec.platform = resolve_platform("platform.refsim", PluginSet{});
  spec.master_seed = 42;
  spec.project = "proj";
  BatchPaths paths{tmp / name};
  generate_batch(paths, spec);
  return paths;
}

PlatformPlugin stub_platform(const std::string& launch) {
  PlatformPlugin p;
  p.id = "platform.stub";
  p.launch_template = launch;
  p.seed_path = "/refsim/seed";
  p.seed_attr = "value";
  p.output_tables = {"none"};
  return p;
}

void put_env(const char* k, const char* v) { setenv(k, v, 1); }
void drop_env(const char* k) { unsetenv(k); }

} // namespace

TEST_CASE("exp range parsing") {
  ExpRange full = parse_exp_range(std::nullopt, 13);
  CHECK(full.lo == 0);
  CHECK(full.hi == 12);

  ExpRange r = parse_exp_range(std::string("10:12"), 13);
  CHECK(r.lo == 10);
  CHECK(r.hi == 12);
  CHECK(r.count() == 3);

  CHECK_THROWS_AS(parse_exp_range(std::string("12:10"), 13), UsageError);
  CHECK_THROWS_AS(parse_exp_range(std::string("0:13"), 13), UsageError);
  CHECK_THROWS_AS(parse_exp_range(std::string("1-2"), 13), UsageError);
}

TEST_CASE("command file: one line per run, relative to the batch root") {
  TempDir tmp;
  BatchPaths paths = make_batch(tmp, "population_size.Log8", 4);
  SeedTable seeds = SeedTable::load(paths.seeds_file());
  PlatformPlugin platform = resolve_platform("platform.refsim", PluginSet{});

  CommandFile cf = generate_command_file(paths, platform, seeds, 1, 4);
  REQUIRE(cf.lines.size() == 4);
  for (size_t r = 0; r < 4; ++r) {
    CHECK(cf.lines[r].find("refsim --input ../../../exp-inputs/exp1/run" + std::to_string(r) +
                           "/input.xml") != std::string::npos);
    CHECK(cf.lines[r].find("cd \"exp-outputs/exp1/run" + std::to_string(r) + "\"") == 0);
    CHECK(cf.lines[r].find("--seed " + std::to_string(seeds.seeds[1][r])) != std::string::npos);
    CHECK(cf.lines[r].find("> run.log 2>&1") != std::string::npos);
  }

  // missing inputs are reported with their indices
  fs::remove_all(paths.input_dir(2) / "run1");
  fs::remove_all(paths.input_dir(2) / "run3");
  CHECK_THROWS_WITH_AS(generate_command_file(paths, platform, seeds, 2, 4),
                       doctest::Contains("{1,3}"), Error);
}

TEST_CASE("hostlist expansion matches an independent oracle") {
  for (const char* s : {"n01", "n[01-03]", "n[1,3,5]", "a[1-2],b[7-8]", "n[01-02,05],m3",
                        "cn[08-11]ib", "x,y,z", "gpu[001-003],login1"}) {
    CHECK(expand_hostlist(s) == oracle::hostlist(s));
  }
  CHECK(expand_hostlist("n[01-02],m3") == std::vector<std::string>{"n01", "n02", "m3"});

  // randomized ranges
  std::mt19937 gen(11);
  for (int i = 0; i < 200; ++i) {
    int lo = static_cast<int>(gen() % 40);
    int hi = lo + static_cast<int>(gen() % 5);
    bool pad = gen() % 2;
    char buf[64];
    if (pad)
      std::snprintf(buf, sizeof(buf), "n[%03d-%03d]", lo, hi);
    else
      std::snprintf(buf, sizeof(buf), "n[%d-%d]", lo, hi);
    CHECK(expand_hostlist(buf) == oracle::hostlist(buf));
  }
}

TEST_CASE("local adapter defaults to the probed core count") {
  ExecEnvAdapter a = adapter_local({});
  CHECK(a.total_slots() == static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
  ExecEnvAdapter b = adapter_local({.jobs_per_node = 3});
  CHECK(b.total_slots() == 3);
  CHECK(b.nodes.size() == 1);
  CHECK(b.remote_shell.empty());
}

TEST_CASE("slurm adapter reads the allocation environment") {
  put_env("SLURM_JOB_NODELIST", "n[01-02]");
  put_env("SLURM_CPUS_PER_TASK", "8");
  ExecEnvAdapter a = adapter_slurm({});
  REQUIRE(a.nodes.size() == 2);
  CHECK(a.nodes[0].host == "n01");
  CHECK(a.nodes[1].host == "n02");
  CHECK(a.nodes[0].slots == 8);
  CHECK(a.total_slots() == 16);

  drop_env("SLURM_JOB_NODELIST");
  CHECK_THROWS_WITH_AS(adapter_slurm({}), doctest::Contains("SLURM_JOB_NODELIST"), ConfigError);
  drop_env("SLURM_CPUS_PER_TASK");
}

TEST_CASE("pbs adapter reads the nodefile") {
  TempDir tmp;
  testutil::write_file(tmp / "nodes", "host-a\nhost-a\nhost-b\n");
  put_env("PBS_NODEFILE", (tmp / "nodes").string().c_str());
  put_env("PBS_NUM_PPN", "4");
  ExecEnvAdapter a = adapter_pbs({});
  REQUIRE(a.nodes.size() == 2);  // duplicates collapse
  CHECK(a.nodes[0].host == "host-a");
  CHECK(a.nodes[1].host == "host-b");
  CHECK(a.nodes[0].slots == 4);
  drop_env("PBS_NODEFILE");
  drop_env("PBS_NUM_PPN");
  CHECK_THROWS_WITH_AS(adapter_pbs({}), doctest::Contains("PBS_NODEFILE"), ConfigError);
}

TEST_CASE("adhoc adapter parses host:slots lines") {
  TempDir tmp;
  testutil::write_file(tmp / "nodes", "a:2\nb:2\n");
  ExecEnvAdapter a = adapter_adhoc({.nodefile = tmp / "nodes"});
  CHECK(a.total_slots() == 4);

  testutil::write_file(tmp / "empty", "\n# comment only\n");
  CHECK_THROWS_AS(adapter_adhoc({.nodefile = tmp / "empty"}), ConfigError);
  CHECK_THROWS_AS(adapter_adhoc({}), ConfigError);
}

TEST_CASE("submit scripts match the committed golden files") {
  SubmitSpec spec;
  spec.nodes = 2;
  spec.walltime = "01:00:00";
  spec.jobs_per_node = 8;
  spec.command = "xbatch --pipeline 2 --project demo";
  fs::path golden = XBATCH_TEST_GOLDEN_DIR;
  CHECK(emit_submit_script_slurm(spec) == testutil::slurp(golden / "submit_slurm.sh"));
  CHECK(emit_submit_script_pbs(spec) == testutil::slurp(golden / "submit_pbs.sh"));
  CHECK(emit_submit_script_slurm(spec).find("#SBATCH --nodes=2") != std::string::npos);
  CHECK(emit_submit_script_pbs(spec).find("#PBS -l nodes=") != std::string::npos);
}

TEST_CASE("dispatch plans share command cores across adapters") {
  TempDir tmp;
  BatchPaths paths = make_batch(tmp, "population_size.Log8", 2);
  SeedTable seeds = SeedTable::load(paths.seeds_file());
  BatchManifest manifest = BatchManifest::load(paths.manifest_file());
  PlatformPlugin platform = resolve_platform("platform.refsim", PluginSet{});
  ExpRange range = parse_exp_range(std::nullopt, manifest.cardinality);

  testutil::write_file(tmp / "nodes", "a:2\nb:2\n");
  put_env("SLURM_JOB_NODELIST", "n[01-02]");
  put_env("SLURM_CPUS_PER_TASK", "2");
  testutil::write_file(tmp / "pbsnodes", "p1\np2\n");
  put_env("PBS_NODEFILE", (tmp / "pbsnodes").string().c_str());
  put_env("PBS_NUM_PPN", "2");

  std::vector<ExecEnvAdapter> adapters = {
      adapter_local({.jobs_per_node = 2}),
      adapter_slurm({}),
      adapter_pbs({}),
      adapter_adhoc({.nodefile = tmp / "nodes"}),
  };
  std::vector<DispatchPlan> plans;
  for (const auto& a : adapters)
    plans.push_back(build_plan(paths, platform, seeds, manifest, a, range));
  for (size_t i = 1; i < plans.size(); ++i) {
    REQUIRE(plans[i].entries.size() == plans[0].entries.size());
    for (size_t j = 0; j < plans[i].entries.size(); ++j)
      CHECK(plans[i].entries[j].core == plans[0].entries[j].core);
  }
  // remote wrappers differ from the local spawn but keep the core verbatim
  CHECK(plans[1].entries[0].wrapped.rfind("ssh n01", 0) == 0);
  CHECK(plans[1].entries[0].wrapped.find("exp-inputs/exp0/run0/input.xml") != std::string::npos);

  drop_env("SLURM_JOB_NODELIST");
  drop_env("SLURM_CPUS_PER_TASK");
  drop_env("PBS_NODEFILE");
  drop_env("PBS_NUM_PPN");
}

TEST_CASE("single-host adhoc plan degenerates to the local plan") {
  TempDir tmp;
  BatchPaths paths = make_batch(tmp, "population_size.4", 2);
  SeedTable seeds = SeedTable::load(paths.seeds_file());
  BatchManifest manifest = BatchManifest::load(paths.manifest_file());
  PlatformPlugin platform = resolve_platform("platform.refsim", PluginSet{});
  ExpRange range{0, 0};

  testutil::write_file(tmp / "one", "localhost\n");
  DispatchPlan adhoc = build_plan(paths, platform, seeds, manifest,
                                  adapter_adhoc({.nodefile = tmp / "one"}), range);
  DispatchPlan local = build_plan(paths, platform, seeds, manifest,
                                  adapter_local({.jobs_per_node = 1}), range);
  CHECK(adhoc.parallelism == local.parallelism);
  REQUIRE(adhoc.entries.size() == local.entries.size());
  for (size_t i = 0; i < adhoc.entries.size(); ++i)
    CHECK(adhoc.entries[i].core == local.entries[i].core);
}

TEST_CASE("oversubscription clamps to the run count") {
  TempDir tmp;
  BatchPaths paths = make_batch(tmp, "population_size.4", 2);
  SeedTable seeds = SeedTable::load(paths.seeds_file());
  BatchManifest manifest = BatchManifest::load(paths.manifest_file());
  PlatformPlugin platform = resolve_platform("platform.refsim", PluginSet{});
  DispatchPlan plan = build_plan(paths, platform, seeds, manifest,
                                 adapter_local({.jobs_per_node = 64}), ExpRange{0, 0});
  CHECK(plan.parallelism == 2);
}

TEST_CASE("dry-run planning never touches run directories") {
  TempDir tmp;
  BatchPaths paths = make_batch(tmp, "population_size.4", 2);
  SeedTable seeds = SeedTable::load(paths.seeds_file());
  BatchManifest manifest = BatchManifest::load(paths.manifest_file());
  PlatformPlugin platform = resolve_platform("platform.refsim", PluginSet{});
  build_plan(paths, platform, seeds, manifest, adapter_local({}), ExpRange{0, 0});
  CHECK_FALSE(fs::exists(paths.exp_outputs()));
}

TEST_CASE("run_batch executes runs and persists exec results") {
  TempDir tmp;
  BatchPaths paths = make_batch(tmp, "population_size.Log4", 3);  // 3 exps x 3 runs
  SeedTable seeds = SeedTable::load(paths.seeds_file());
  BatchManifest manifest = BatchManifest::load(paths.manifest_file());
  // stub platform: write a marker file instead of simulating
  PlatformPlugin platform =
      stub_platform("sh -c 'echo done > marker.txt' marker {input} {seed}");

  auto results = run_batch(paths, platform, seeds, manifest,
                           adapter_local({.jobs_per_node = 2}), ExpRange{0, 2}, 0);
  REQUIRE(results.size() == 3);
  for (const auto& r : results) {
    CHECK(r.ok_count == 3);
    CHECK(r.fail_count == 0);
  }
  CHECK(fs::exists(paths.run_output_dir(1, 2) / "marker.txt"));
  CHECK(fs::exists(paths.output_dir(0) / "commands.txt"));

  ExecResult loaded = load_exec_result(paths.output_dir(2) / "exec.yaml");
  CHECK(loaded.exp == 2);
  CHECK(loaded.ok_count == 3);
  CHECK(loaded.runs.size() == 3);
}

TEST_CASE("a failing run does not abort its experiment") {
  TempDir tmp;
  BatchPaths paths = make_batch(tmp, "population_size.4", 3);
  SeedTable seeds = SeedTable::load(paths.seeds_file());
  BatchManifest manifest = BatchManifest::load(paths.manifest_file());
  // run1 fails (its input path contains "run1"), others succeed
  PlatformPlugin platform = stub_platform(
      "sh -c 'case \"$1\" in *run1*) exit 3;; esac; echo ok > out.txt' x {input} {seed}");
  auto results = run_batch(paths, platform, seeds, manifest, adapter_local({.jobs_per_node = 1}),
                           ExpRange{0, 0}, 0);
  REQUIRE(results.size() == 1);
  CHECK(results[0].ok_count == 2);
  CHECK(results[0].fail_count == 1);
  CHECK(results[0].runs[1].exit_code == 3);
  CHECK(fs::exists(paths.run_output_dir(0, 2) / "out.txt"));
}

TEST_CASE("--retry re-attempts failed runs") {
  TempDir tmp;
  BatchPaths paths = make_batch(tmp, "population_size.4", 1);
  SeedTable seeds = SeedTable::load(paths.seeds_file());
  BatchManifest manifest = BatchManifest::load(paths.manifest_file());
  PlatformPlugin platform = stub_platform("sh -c 'exit 7' x {input} {seed}");
  auto results = run_batch(paths, platform, seeds, manifest, adapter_local({.jobs_per_node = 1}),
                           ExpRange{0, 0}, 2);
  CHECK(results[0].fail_count == 1);
  CHECK(results[0].runs[0].attempts == 3);  // 1 try + 2 retries
}

TEST_CASE("parallelism=1 serializes runs within an experiment") {
  TempDir tmp;
  BatchPaths paths = make_batch(tmp, "population_size.4", 3);
  SeedTable seeds = SeedTable::load(paths.seeds_file());
  BatchManifest manifest = BatchManifest::load(paths.manifest_file());
  PlatformPlugin platform = stub_platform(
      "sh -c 'date +%s%N > start.ns; sleep 0.05; date +%s%N > end.ns' x {input} {seed}");
  run_batch(paths, platform, seeds, manifest, adapter_local({.jobs_per_node = 1}), ExpRange{0, 0},
            0);
  long long prev_end = 0;
  for (size_t r = 0; r < 3; ++r) {
    long long start = std::stoll(testutil::slurp(paths.run_output_dir(0, r) / "start.ns"));
    long long end = std::stoll(testutil::slurp(paths.run_output_dir(0, r) / "end.ns"));
    CHECK(start >= prev_end);
    prev_end = end;
  }
}

TEST_CASE("range execution touches only the selected experiments") {
  TempDir tmp;
  BatchPaths paths = make_batch(tmp, "population_size.Log4096", 1);  // 13 experiments
  SeedTable seeds = SeedTable::load(paths.seeds_file());
  BatchManifest manifest = BatchManifest::load(paths.manifest_file());
  PlatformPlugin platform = stub_platform("sh -c 'echo ok > out.txt' x {input} {seed}");
  run_batch(paths, platform, seeds, manifest, adapter_local({.jobs_per_node = 2}),
            parse_exp_range(std::string("10:12"), 13), 0);
  for (size_t e = 0; e < 13; ++e) {
    bool in_range = e >= 10 && e <= 12;
    CHECK(fs::exists(paths.output_dir(e) / "exec.yaml") == in_range);
  }
}

TEST_CASE("re-running a completed range leaves refsim outputs byte-identical") {
  TempDir tmp;
  BatchPaths paths = make_batch(tmp, "population_size.4", 2);
  SeedTable seeds = SeedTable::load(paths.seeds_file());
  BatchManifest manifest = BatchManifest::load(paths.manifest_file());
  PlatformPlugin platform = resolve_platform("platform.refsim", PluginSet{});
  // refsim must be on PATH for the command lines to run
  const char* bin_dir = getenv("XBATCH_BIN_DIR");
  REQUIRE(bin_dir != nullptr);
  std::string path = std::string(bin_dir) + ":" + getenv("PATH");
  setenv("PATH", path.c_str(), 1);

  run_batch(paths, platform, seeds, manifest, adapter_local({.jobs_per_node = 2}), ExpRange{0, 0},
            0);
  std::string first = testutil::slurp(paths.run_output_dir(0, 0) / "output/collected.csv");
  REQUIRE_FALSE(first.empty());
  run_batch(paths, platform, seeds, manifest, adapter_local({.jobs_per_node = 1}), ExpRange{0, 0},
            0);
  CHECK(testutil::slurp(paths.run_output_dir(0, 0) / "output/collected.csv") == first);
  CHECK(testutil::slurp(paths.run_output_dir(0, 1) / "output/collected.csv") != first);
}
