#include <doctest.h>

#include <cstdlib>

#include "helpers.hpp"
#include "xbatch/pipeline.hpp"

using namespace xbatch;
using testutil::TempDir;

namespace {

void ensure_refsim_on_path() {
  static bool done = false;
  if (done) return;
  const char* bin_dir = getenv("XBATCH_BIN_DIR");
  REQUIRE(bin_dir != nullptr);
  std::string path = std::string(bin_dir) + ":" + getenv("PATH");
  setenv("PATH", path.c_str(), 1);
  done = true;
}

// project dir with a graphs.yaml for the refsim stems
void write_project(const fs::path& dir) {
  testutil::write_file(dir / "config/graphs.yaml",
                       "graphs:\n"
                       "  - {id: collected-final, kind: linegraph, scope: inter_exp, "
                       "stem: collected, column: collected, title: Collected}\n"
                       "  - {id: collected-ts, kind: linegraph, scope: intra_exp, "
                       "stem: collected, columns: [collected]}\n");
}

Invocation smoke_invocation(const TempDir& tmp) {
  testutil::write_file(tmp / "exp.xml", testutil::refsim_template);
  write_project(tmp / "demo");
  Invocation inv;
  inv.template_input_file = (tmp / "exp.xml").string();
  inv.project = (tmp / "demo").string();
  inv.batch_criteria = {"population_size.Log2"};  // 2 experiments
  inv.exp_setup = "exp_setup.T20.K1";
  inv.n_runs = 3;
  inv.sierra_root = (tmp / "sierra").string();
  inv.master_seed = 7;
  inv.exec_jobs_per_node = 2;
  return inv;
}

} // namespace

TEST_CASE("stage selection and ordering") {
  Invocation inv;
  inv.project = "p";
  inv.batch_criteria = {"population_size.Log8"};
  inv.pipeline = {4, 2};
  CHECK_THROWS_WITH_AS(plan_pipeline(inv), doctest::Contains("increasing"), UsageError);

  inv.pipeline = {0};
  CHECK_THROWS_AS(plan_pipeline(inv), UsageError);
  inv.pipeline = {6};
  CHECK_THROWS_AS(plan_pipeline(inv), UsageError);

  // default pipeline is stages 1-4; stage 1 then demands its flags
  inv.pipeline.clear();
  CHECK_THROWS_WITH_AS(plan_pipeline(inv), doctest::Contains("--template-input-file"),
                       UsageError);
}

TEST_CASE("stage prerequisites are checked at plan time") {
  TempDir tmp;
  Invocation inv;
  inv.project = (tmp / "demo").string();
  inv.batch_criteria = {"population_size.Log2"};
  inv.sierra_root = (tmp / "sierra").string();
  inv.pipeline = {3, 4};
  CHECK_THROWS_WITH_AS(plan_pipeline(inv), doctest::Contains("stage 3"), UsageError);

  inv.pipeline = {2};
  CHECK_THROWS_WITH_AS(plan_pipeline(inv), doctest::Contains("manifest"), UsageError);
}

TEST_CASE("stage 5 requires the compare flag set") {
  Invocation inv;
  inv.pipeline = {5};
  CHECK_THROWS_WITH_AS(plan_pipeline(inv), doctest::Contains("--compare"), UsageError);

  inv.compare = {"/nonexistent/a", "/nonexistent/b"};
  inv.compare_mode = "intra";
  inv.compare_target = "t";
  inv.compare_output_root = "/tmp/out";
  CHECK_THROWS_WITH_AS(plan_pipeline(inv), doctest::Contains("manifest"), UsageError);
}

TEST_CASE("full pipeline smoke run on the reference platform") {
  ensure_refsim_on_path();
  TempDir tmp;
  Invocation inv = smoke_invocation(tmp);
  PipelinePlan plan = plan_pipeline(inv);
  CHECK(plan.stages == std::vector<int>{1, 2, 3, 4});
  REQUIRE(run_pipeline(plan) == 0);

  BatchPaths paths = plan.paths;
  CHECK(fs::exists(paths.manifest_file()));
  CHECK(fs::exists(paths.seeds_file()));
  CHECK(fs::exists(paths.run_input(1, 2)));
  CHECK(fs::exists(paths.run_output_dir(1, 2) / "output/collected.csv"));
  CHECK(fs::exists(paths.stats_dir(0) / "collected.mean.csv"));
  CHECK(fs::exists(paths.statistics() / "collated/collected.collected.csv"));
  CHECK(fs::exists(paths.graphs() / "collated/collected-final.json"));
  CHECK(fs::exists(paths.graphs() / "collated/collected-final.svg"));
  CHECK(fs::exists(paths.graphs() / "exp0/collected-ts.json"));
  CHECK(fs::exists(paths.events_file()));

  // the manifest records the flag snapshot concept (empty here) and axes
  BatchManifest m = BatchManifest::load(paths.manifest_file());
  CHECK(m.cardinality == 2);
  CHECK(m.axes[0].geometric);
}

TEST_CASE("stage subsets re-run without touching earlier stages' outputs") {
  ensure_refsim_on_path();
  TempDir tmp;
  Invocation inv = smoke_invocation(tmp);
  PipelinePlan plan = plan_pipeline(inv);
  REQUIRE(run_pipeline(plan) == 0);

  // collect mtimes of exp-inputs and exp-outputs
  std::map<std::string, fs::file_time_type> before;
  for (const char* sub : {"exp-inputs", "exp-outputs"})
    for (const auto& de : fs::recursive_directory_iterator(plan.paths.root / sub))
      if (de.is_regular_file()) before[de.path().string()] = de.last_write_time();

  Invocation rerun = inv;
  rerun.pipeline = {3, 4};
  PipelinePlan plan34 = plan_pipeline(rerun);
  REQUIRE(run_pipeline(plan34) == 0);

  for (const char* sub : {"exp-inputs", "exp-outputs"})
    for (const auto& de : fs::recursive_directory_iterator(plan.paths.root / sub))
      if (de.is_regular_file())
        CHECK(de.last_write_time() == before.at(de.path().string()));
}

TEST_CASE("stage {3,4} regenerates statistics from existing outputs") {
  ensure_refsim_on_path();
  TempDir tmp;
  Invocation inv = smoke_invocation(tmp);
  PipelinePlan plan = plan_pipeline(inv);
  REQUIRE(run_pipeline(plan) == 0);

  fs::remove_all(plan.paths.statistics());
  Invocation rerun = inv;
  rerun.pipeline = {3, 4};
  REQUIRE(run_pipeline(plan_pipeline(rerun)) == 0);
  CHECK(fs::exists(plan.paths.stats_dir(0) / "collected.mean.csv"));
}

TEST_CASE("config-delta locality: one target's label change touches only its files") {
  ensure_refsim_on_path();
  TempDir tmp;
  Invocation inv = smoke_invocation(tmp);
  PipelinePlan plan = plan_pipeline(inv);
  REQUIRE(run_pipeline(plan) == 0);

  auto digest_graphs = [&]() {
    std::map<std::string, std::string> d;
    for (const auto& de : fs::recursive_directory_iterator(plan.paths.graphs()))
      if (de.is_regular_file()) d[de.path().string()] = testutil::slurp(de.path());
    return d;
  };
  auto before = digest_graphs();

  // change only the intra target's axis label
  testutil::write_file(tmp / "demo/config/graphs.yaml",
                       "graphs:\n"
                       "  - {id: collected-final, kind: linegraph, scope: inter_exp, "
                       "stem: collected, column: collected, title: Collected}\n"
                       "  - {id: collected-ts, kind: linegraph, scope: intra_exp, "
                       "stem: collected, columns: [collected], ylabel: objects}\n");
  Invocation rerun = inv;
  rerun.pipeline = {4};
  REQUIRE(run_pipeline(plan_pipeline(rerun)) == 0);

  auto after = digest_graphs();
  REQUIRE(before.size() == after.size());
  for (const auto& [path, bytes] : after) {
    bool is_ts_target = path.find("collected-ts") != std::string::npos;
    if (is_ts_target)
      CHECK(bytes != before.at(path));
    else
      CHECK(bytes == before.at(path));
  }
}

TEST_CASE("stage 1 alone executes nothing") {
  ensure_refsim_on_path();
  TempDir tmp;
  Invocation inv = smoke_invocation(tmp);
  inv.pipeline = {1};
  PipelinePlan plan = plan_pipeline(inv);
  REQUIRE(run_pipeline(plan) == 0);
  CHECK(fs::exists(plan.paths.exp_inputs()));
  CHECK_FALSE(fs::exists(plan.paths.exp_outputs()));
}

TEST_CASE("the xbatch binary rejects unknown flags and bad stage math") {
  const char* bin_dir = getenv("XBATCH_BIN_DIR");
  REQUIRE(bin_dir != nullptr);
  std::string xbatch = std::string(bin_dir) + "/xbatch";
  std::string out;
  int rc = run_capture(xbatch + " --no-such-flag 2>&1", out);
  CHECK(rc != 0);
  rc = run_capture(xbatch + " --pipeline 4 2 --project p --batch-criteria population_size.Log2 2>&1",
                   out);
  CHECK(rc == 2);
  CHECK(out.find("increasing") != std::string::npos);
}

TEST_CASE("video targets render frames and emit encoder commands") {
  ensure_refsim_on_path();
  TempDir tmp;
  Invocation inv = smoke_invocation(tmp);
  testutil::write_file(tmp / "demo/config/graphs.yaml",
                       "graphs:\n"
                       "  - {id: spatial-video, kind: video, scope: intra_exp, stem: spatial}\n");
  inv.platform_vc = true;
  inv.render_cmd_opts = "-r 30";
  PipelinePlan plan = plan_pipeline(inv);
  REQUIRE(run_pipeline(plan) == 0);

  fs::path cmd_file = plan.paths.videos() / "exp0/spatial.cmd";
  REQUIRE(fs::exists(cmd_file));
  std::string cmd = testutil::slurp(cmd_file);
  CHECK(cmd.find("ffmpeg") == 0);
  CHECK(cmd.find("-r 30") != std::string::npos);       // user opts appended verbatim
  CHECK(cmd.find("spatial.mp4") != std::string::npos);
  // frames rendered for the encoder glob, zero-padded for ordering
  CHECK(fs::exists(plan.paths.graphs() / "exp0/frames/spatial.0000.svg"));
  CHECK(fs::exists(plan.paths.graphs() / "exp1/frames/spatial.0009.svg"));
  // nothing executed the encoder (no --render-exec)
  CHECK_FALSE(fs::exists(plan.paths.videos() / "exp0/spatial.mp4"));
}

TEST_CASE("frame-based targets are skipped when capture is off") {
  ensure_refsim_on_path();
  TempDir tmp;
  Invocation inv = smoke_invocation(tmp);
  testutil::write_file(tmp / "demo/config/graphs.yaml",
                       "graphs:\n"
                       "  - {id: collected-final, kind: linegraph, scope: inter_exp, "
                       "stem: collected, column: collected}\n"
                       "  - {id: spatial-video, kind: video, scope: intra_exp, stem: spatial}\n");
  PipelinePlan plan = plan_pipeline(inv);
  REQUIRE(run_pipeline(plan) == 0);  // no --platform-vc: video skipped, stage still ok
  CHECK(fs::exists(plan.paths.graphs() / "collated/collected-final.json"));
  CHECK_FALSE(fs::exists(plan.paths.videos()));
}

TEST_CASE("defaults: stages 1-4, compare implies stage 5") {
  TempDir tmp;
  Invocation inv = smoke_invocation(tmp);
  CHECK(plan_pipeline(inv).stages == std::vector<int>{1, 2, 3, 4});

  Invocation cmp;
  cmp.compare = {"/nope/a", "/nope/b"};
  cmp.compare_mode = "intra";
  cmp.compare_target = "t";
  cmp.compare_output_root = "/tmp/x";
  // stage set defaults to {5}; root validation then fires
  CHECK_THROWS_WITH_AS(plan_pipeline(cmp), doctest::Contains("manifest"), UsageError);
}

TEST_CASE("master seed falls back to the environment variable") {
  ensure_refsim_on_path();
  TempDir tmp;
  Invocation inv = smoke_invocation(tmp);
  inv.master_seed.reset();
  inv.pipeline = {1};
  setenv("XBATCH_MASTER_SEED", "424242", 1);
  PipelinePlan plan = plan_pipeline(inv);
  REQUIRE(run_pipeline(plan) == 0);
  unsetenv("XBATCH_MASTER_SEED");
  BatchManifest m = BatchManifest::load(plan.paths.manifest_file());
  CHECK(m.master_seed == 424242);
}

TEST_CASE("--no-master-node is accepted and ignored with a warning") {
  const char* bin_dir = getenv("XBATCH_BIN_DIR");
  REQUIRE(bin_dir != nullptr);
  std::string out;
  int rc = run_capture(std::string(bin_dir) +
                           "/xbatch --no-master-node --pipeline 1 --project p 2>&1",
                       out);
  CHECK(rc == 2);  // still fails on the missing required flags, not the flag itself
  CHECK(out.find("--no-master-node") != std::string::npos);
  CHECK(out.find("ignored") != std::string::npos);
}

TEST_CASE("box-whisker mode flows through stages 3 and 4") {
  ensure_refsim_on_path();
  TempDir tmp;
  Invocation inv = smoke_invocation(tmp);
  inv.dist_stats = "bw";
  PipelinePlan plan = plan_pipeline(inv);
  REQUIRE(run_pipeline(plan) == 0);
  CHECK(fs::exists(plan.paths.stats_dir(0) / "collected.q1.csv"));
  CHECK_FALSE(fs::exists(plan.paths.stats_dir(0) / "collected.ciL95.csv"));
  auto doc = PlotDocument::from_json(nlohmann::json::parse(
      testutil::slurp(plan.paths.graphs() / "exp0/collected-ts.json")));
  REQUIRE_FALSE(doc.series.empty());
  CHECK_FALSE(doc.series[0].band_lo.empty());
}

TEST_CASE("existing batches run on the platform their manifest records") {
  ensure_refsim_on_path();
  TempDir tmp;
  Invocation inv = smoke_invocation(tmp);
  inv.pipeline = {1};
  PipelinePlan plan = plan_pipeline(inv);
  REQUIRE(run_pipeline(plan) == 0);

  Invocation rerun = inv;
  rerun.pipeline = {2, 3};
  rerun.platform = "platform.other";  // ignored: the manifest wins
  REQUIRE(run_pipeline(plan_pipeline(rerun)) == 0);
  CHECK(fs::exists(plan.paths.run_output_dir(0, 0) / "output/collected.csv"));
}

TEST_CASE("project criteria.yaml rebinds parser ids") {
  TempDir tmp;
  testutil::write_file(tmp / "proj/config/criteria.yaml",
                       "criteria:\n"
                       "  wind_speed: {series: scalar_range, path: /refsim/wind, attr: speed}\n"
                       "  mode: {series: policy_set, path: /refsim/agents, attr: mode, "
                       "universe: [calm, storm]}\n");
  PluginSet plugins;
  ParserRegistry reg = project_registry(tmp / "proj", plugins);
  CriterionDef wind = parse_criterion(make_spec("wind_speed.min=0p5.max=2p5.C3"), reg);
  REQUIRE(wind.values.size() == 3);
  CHECK(wind.values[1].changes[0].path == "/refsim/wind");
  CHECK(wind.values[1].changes[0].name == "speed");
  CHECK(*wind.values[1].numeric == 1.5);

  CriterionDef mode = parse_criterion(make_spec("mode.all"), reg);
  CHECK(mode.values.size() == 2);
  // built-ins stay available alongside the rebindings
  CHECK(parse_criterion(make_spec("population_size.Log4"), reg).values.size() == 3);
}

TEST_CASE("stage 5 through the pipeline: --as-lines emits one doc per row") {
  TempDir tmp;
  // two completed fake batches with heatmap targets
  for (const char* name : {"a", "b"}) {
    BatchManifest m;
    m.project = "demo";
    m.platform_id = "platform.refsim";
    m.exec_env = "hpc.local";
    m.scenario = "arena16";
    m.controller = name;
    m.cardinality = 6;
    m.rows = 2;
    m.cols = 3;
    m.n_runs = 1;
    m.setup.duration_s = 10;
    m.resolved_hz = 10;
    m.created = "2026-01-01T00:00:00Z";
    AxisInfo a;
    a.token = "population_size.Log2";
    a.name = "population_size";
    m.axes.push_back(a);
    AxisInfo b;
    b.token = "saa_noise.all.C3";
    b.name = "saa_noise";
    m.axes.push_back(b);
    m.save(BatchPaths{tmp / name}.manifest_file());

    PlotDocument doc;
    doc.kind = "heatmap";
    MatrixPanel p;
    p.title = "collected";
    p.rows = 2;
    p.cols = 3;
    p.cells = {{1, 2, 3}, {4, 5, 6}};
    p.row_labels = {"1", "2"};
    p.col_labels = {"0", "0.5", "1"};
    doc.panels.push_back(p);
    write_file_atomic(BatchPaths{tmp / name}.graphs() / "collated/collected-heat.json",
                      doc.dump());
  }

  Invocation inv;
  inv.compare = {(tmp / "a").string(), (tmp / "b").string()};
  inv.compare_mode = "intra";
  inv.compare_target = "collected-heat";
  inv.compare_output_root = (tmp / "out").string();
  inv.as_lines = "row";
  PipelinePlan plan = plan_pipeline(inv);
  CHECK(plan.stages == std::vector<int>{5});
  REQUIRE(run_pipeline(plan) == 0);
  CHECK(fs::exists(tmp / "out/collected-heat.row0.json"));
  CHECK(fs::exists(tmp / "out/collected-heat.row1.svg"));
  auto doc = PlotDocument::from_json(
      nlohmann::json::parse(testutil::slurp(tmp / "out/collected-heat.row0.json")));
  CHECK(doc.kind == "linegraph");
  CHECK(doc.series.size() == 2);
}

TEST_CASE("dry run produces a plan and leaves run dirs untouched") {
  ensure_refsim_on_path();
  TempDir tmp;
  Invocation inv = smoke_invocation(tmp);
  inv.pipeline = {1};
  REQUIRE(run_pipeline(plan_pipeline(inv)) == 0);

  Invocation dry = inv;
  dry.pipeline = {2};
  dry.exec_dry_run = true;
  PipelinePlan plan = plan_pipeline(dry);
  REQUIRE(run_pipeline(plan) == 0);
  CHECK_FALSE(fs::exists(plan.paths.exp_outputs()));
}
