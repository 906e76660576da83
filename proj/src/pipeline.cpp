#include "xbatch/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <set>

#include <yaml-cpp/yaml.h>

namespace xbatch {

namespace {

void log_line(const std::string& msg) { std::cerr << "[xbatch] " << msg << "\n"; }

void log_event(const BatchPaths& paths, int stage, const std::string& outcome, double wall_s) {
  if (!fs::exists(paths.root)) return;
  std::ofstream out(paths.events_file(), std::ios::app);
  out << "{\"stage\":" << stage << ",\"outcome\":\"" << outcome << "\",\"wall_s\":" << fmt_double(wall_s)
      << "}\n";
}

// --project accepts a bare name or a directory path
std::string project_name_of(const std::string& project) {
  fs::path p = fs::path(project).lexically_normal();
  std::string name = p.filename().string();
  if (name.empty()) name = p.parent_path().filename().string();
  return name;
}

std::uint64_t pick_master_seed(const Invocation& opts) {
  if (opts.master_seed) return *opts.master_seed;
  std::string env = getenv_or("XBATCH_MASTER_SEED", "");
  if (!env.empty()) {
    auto v = parse_int(env);
    if (!v) throw ConfigError("XBATCH_MASTER_SEED is not an integer: '" + env + "'");
    return static_cast<std::uint64_t>(*v);
  }
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

struct StageContext {
  const PipelinePlan& plan;
  const Invocation& opts;
  PluginSet plugins;
  PlatformPlugin platform;
  fs::path project_dir;
};

// Stages past 1 run against an existing batch: its manifest, not the flag,
// decides the platform.
PlatformPlugin platform_for_batch(const StageContext& ctx, const BatchManifest& manifest) {
  if (manifest.platform_id == ctx.platform.id) return ctx.platform;
  if (ctx.opts.platform != manifest.platform_id)
    log_line("warning: batch was generated for " + manifest.platform_id +
             "; ignoring --platform " + ctx.opts.platform);
  return resolve_platform(manifest.platform_id, ctx.plugins);
}

// ----- stage 1 -------------------------------------------------------------

void run_stage1(StageContext& ctx) {
  const Invocation& opts = ctx.opts;
  ParserRegistry registry = project_registry(ctx.project_dir, ctx.plugins);
  BatchCriteria criteria = parse_batch_criteria(opts.batch_criteria, registry);

  GenSpec spec;
  spec.template_file = *opts.template_input_file;
  spec.criteria = criteria;
  spec.n_runs = opts.n_runs;
  spec.setup = parse_exp_setup(*opts.exp_setup);
  spec.platform = ctx.platform;
  spec.platform_vc = opts.platform_vc;
  spec.master_seed = pick_master_seed(opts);
  spec.force_regen = opts.force_regen;
  spec.project = project_name_of(*opts.project);
  spec.exec_env = opts.exec_env;
  spec.scenario = opts.scenario.value_or(fs::path(*opts.template_input_file).stem().string());
  spec.controller = opts.controller.value_or("");
  spec.robot = opts.robot.value_or("");
  spec.flags = opts.flags_snapshot;

  if (opts.controller) {
    fs::path file = ctx.project_dir / "config" / "controllers.yaml";
    spec.extras.push_back(extra_changes_from_yaml(file, *opts.controller));
  }
  if (opts.robot) {
    fs::path file = ctx.project_dir / "config" / "robots.yaml";
    spec.extras.push_back(extra_changes_from_yaml(file, *opts.robot));
  }

  BatchManifest m = generate_batch(ctx.plan.paths, spec);
  log_line("stage 1: generated " + std::to_string(m.cardinality) + " experiments x " +
           std::to_string(m.n_runs) + " runs under " + ctx.plan.paths.root.string());
}

// ----- stage 2 -------------------------------------------------------------

int run_stage2(StageContext& ctx) {
  const Invocation& opts = ctx.opts;
  BatchManifest manifest = BatchManifest::load(ctx.plan.paths.manifest_file());
  PlatformPlugin platform = platform_for_batch(ctx, manifest);
  SeedTable seeds = SeedTable::load(ctx.plan.paths.seeds_file());
  AdapterOptions aopts;
  aopts.jobs_per_node = opts.exec_jobs_per_node;
  if (opts.nodefile) aopts.nodefile = fs::path(*opts.nodefile);
  ExecEnvAdapter adapter = make_adapter(opts.exec_env, aopts);
  ExpRange range = parse_exp_range(opts.exp_range, manifest.cardinality);

  if (opts.exec_dry_run) {
    DispatchPlan plan = build_plan(ctx.plan.paths, platform, seeds, manifest, adapter, range);
    std::cout << plan.text();
    log_line("stage 2: dry run, " + std::to_string(plan.entries.size()) + " runs planned");
    return 0;
  }

  auto results = run_batch(ctx.plan.paths, platform, seeds, manifest, adapter, range,
                           opts.retry);
  size_t ok = 0, failed = 0;
  for (const auto& r : results) {
    ok += r.ok_count;
    failed += r.fail_count;
  }
  log_line("stage 2: " + std::to_string(ok) + " runs ok, " + std::to_string(failed) +
           " failed across " + std::to_string(results.size()) + " experiments");
  return failed == 0 ? 0 : 1;
}

// ----- stage 3 -------------------------------------------------------------

void run_stage3(StageContext& ctx) {
  const Invocation& opts = ctx.opts;
  BatchManifest manifest = BatchManifest::load(ctx.plan.paths.manifest_file());
  PlatformPlugin platform = platform_for_batch(ctx, manifest);
  StorageDriver storage = resolve_storage(opts.storage_medium, ctx.plugins);
  ExpRange range = parse_exp_range(opts.exp_range, manifest.cardinality);
  DistStats mode = dist_stats_from_name(opts.dist_stats);
  bool process_frames = opts.platform_vc || manifest.platform_vc;

  for (size_t e = range.lo; e <= range.hi; ++e) {
    std::map<std::string, RunStack> stacks;
    for (const std::string& stem : platform.output_tables) {
      RunStack stack = collate_runs(ctx.plan.paths, storage, e, stem, manifest.n_runs);
      for (size_t skipped : stack.skipped)
        log_line("stage 3: exp" + std::to_string(e) + "/" + stem + ": run" +
                 std::to_string(skipped) + " has no output, excluded");
      StatsBundle bundle = intra_exp_stats(stack);
      write_stats_bundle(ctx.plan.paths.stats_dir(e), stem, bundle, mode);
      stacks.emplace(stem, std::move(stack));
    }
    if (process_frames)
      for (const std::string& stem : platform.output_snapshots)
        heatmap_frames(ctx.plan.paths, storage, e, stem, manifest.n_runs);
    write_stats_manifest(ctx.plan.paths.stats_dir(e), stacks);
  }

  // collated inter-experiment stats need every experiment's outputs
  if (range.lo == 0 && range.hi + 1 == manifest.cardinality) {
    Reducer reducer = reducer_from_name(opts.reducer);
    for (const std::string& stem : platform.output_tables) {
      RunStack probe = collate_runs(ctx.plan.paths, storage, 0, stem, manifest.n_runs);
      auto idx = probe.tables[0].index_column();
      for (size_t c = 0; c < probe.tables[0].n_cols(); ++c) {
        if (idx && c == *idx) continue;
        SummaryTable summary = inter_exp_stats(ctx.plan.paths, manifest, storage, stem,
                                               probe.tables[0].columns[c], reducer);
        save_summary(ctx.plan.paths.statistics() / "collated", summary);
      }
    }
  } else {
    log_line("stage 3: --exp-range excludes part of the batch; collated summaries skipped");
  }
  log_line("stage 3: statistics written for exp" + std::to_string(range.lo) + "..exp" +
           std::to_string(range.hi));
}

// ----- stage 4 -------------------------------------------------------------

void render_target_doc(const fs::path& base, const std::string& file_stem,
                       const PlotDocument& doc) {
  write_file_atomic(base / (file_stem + ".json"), doc.dump());
  write_file_atomic(base / (file_stem + ".svg"), render_plot(doc));
}

void run_stage4(StageContext& ctx) {
  const Invocation& opts = ctx.opts;
  BatchManifest manifest = BatchManifest::load(ctx.plan.paths.manifest_file());
  ExpRange range = parse_exp_range(opts.exp_range, manifest.cardinality);
  DistStats mode = dist_stats_from_name(opts.dist_stats);

  fs::path config_file = ctx.project_dir / "config" / "graphs.yaml";
  if (!fs::exists(config_file)) {
    log_line("stage 4: no " + config_file.string() + "; nothing to generate");
    return;
  }
  GraphConfig config = load_graph_config(config_file);
  for (const auto& w : config.warnings) log_line("stage 4: " + w);

  size_t generated = 0;
  for (const GraphTarget& target : config.targets) {
    std::vector<ModelPlugin> models;
    for (const auto& id : target.models) models.push_back(resolve_model(id, ctx.plugins));

    if (target.scope == "inter_exp") {
      if (target.columns.size() != 1)
        throw ConfigError("target '" + target.id + "': inter_exp targets need exactly one column");
      SummaryTable summary =
          load_summary(ctx.plan.paths.statistics() / "collated", target.stem, target.columns[0]);
      PlotDocument doc;
      if (target.kind == "linegraph")
        doc = gen_inter_linegraph(summary, target, manifest, mode);
      else if (target.kind == "heatmap")
        doc = gen_heatmap(summary, target, manifest, mode);
      else
        throw ConfigError("target '" + target.id + "': videos must be intra_exp");
      if (!models.empty())
        doc = overlay_models(doc, models, ctx.plan.paths.models() / target.id);
      render_target_doc(ctx.plan.paths.graphs() / "collated", target.id, doc);
      ++generated;
      continue;
    }

    // intra_exp targets, one deliverable per experiment in range
    for (size_t e = range.lo; e <= range.hi; ++e) {
      fs::path exp_graphs = ctx.plan.paths.graphs() / ("exp" + std::to_string(e));
      if (target.kind == "linegraph") {
        PlotDocument doc = gen_intra_linegraph(ctx.plan.paths.stats_dir(e), target, manifest, mode);
        if (!models.empty())
          doc = overlay_models(doc, models,
                               ctx.plan.paths.models() / (target.id + ".exp" + std::to_string(e)));
        render_target_doc(exp_graphs, target.id, doc);
        ++generated;
        continue;
      }
      // heatmap frames and videos read stage-3 frame matrices
      if (!opts.platform_vc && !manifest.platform_vc) {
        log_line("stage 4: skipping target '" + target.id +
                 "': visual capture is off (pass --platform-vc)");
        break;
      }
      fs::path frames_dir = ctx.plan.paths.stats_dir(e) / "frames";
      if (!fs::is_directory(frames_dir))
        throw Error("target '" + target.id + "': no frames under " + frames_dir.string() +
                    " (generate with --platform-vc)");
      std::vector<std::pair<long long, fs::path>> frames;
      std::string prefix = target.stem + ".";
      for (const auto& de : fs::directory_iterator(frames_dir)) {
        std::string name = de.path().filename().string();
        if (!starts_with(name, prefix) || !name.ends_with(".csv")) continue;
        auto k = parse_int(name.substr(prefix.size(), name.size() - prefix.size() - 4));
        if (k) frames.emplace_back(*k, de.path());
      }
      std::sort(frames.begin(), frames.end());
      if (frames.empty())
        throw Error("target '" + target.id + "': no '" + target.stem + "' frames in " +
                    frames_dir.string());

      if (target.kind == "heatmap") {
        Matrix last = parse_csv_matrix(read_file(frames.back().second),
                                       frames.back().second.string());
        PlotDocument doc = gen_frame_heatmap(last, target, manifest, frames.back().first);
        render_target_doc(exp_graphs, target.id, doc);
        ++generated;
        continue;
      }

      // video: render every frame, then emit the encoder command
      fs::path frame_svgs = exp_graphs / "frames";
      for (const auto& [k, file] : frames) {
        Matrix m = parse_csv_matrix(read_file(file), file.string());
        PlotDocument doc = gen_frame_heatmap(m, target, manifest, k);
        char name[64];
        std::snprintf(name, sizeof(name), "%s.%04lld.svg", target.stem.c_str(),
                      static_cast<long long>(k));
        write_file_atomic(frame_svgs / name, render_plot(doc));
      }
      fs::path video_dir = ctx.plan.paths.videos() / ("exp" + std::to_string(e));
      fs::path output = video_dir / (target.stem + ".mp4");
      std::string cmd = emit_video_cmd(frame_svgs, config.video_render_template, 10,
                                       opts.render_cmd_opts, output);
      write_file_atomic(video_dir / (target.stem + ".cmd"), cmd + "\n");
      if (opts.render_exec) {
        std::string out;
        int rc = run_capture(cmd, out);
        if (rc != 0) throw Error("render command failed (exit " + std::to_string(rc) + "): " + cmd);
      }
      ++generated;
    }
  }
  log_line("stage 4: " + std::to_string(generated) + " deliverables generated");
}

// ----- stage 5 -------------------------------------------------------------

void run_stage5(StageContext& ctx) {
  const Invocation& opts = ctx.opts;
  ComparisonSpec spec;
  spec.mode = *opts.compare_mode == "intra" ? "intra_scenario" : "inter_scenario";
  for (const auto& root : opts.compare) spec.batch_roots.emplace_back(root);
  spec.target_id = *opts.compare_target;
  spec.output_id = spec.target_id;
  spec.model_ids = opts.compare_models;
  spec.as_lines = opts.as_lines;
  spec.diff_panel = opts.compare_diff;

  CompareResult result = compare(spec, ctx.plugins);
  for (const auto& w : result.warnings) log_line("stage 5: warning: " + w);
  fs::path out_root = *opts.compare_output_root;
  for (const auto& [stem, doc] : result.documents) {
    write_file_atomic(out_root / (stem + ".json"), doc.dump());
    write_file_atomic(out_root / (stem + ".svg"), render_plot(doc));
  }
  log_line("stage 5: " + std::to_string(result.documents.size()) + " comparison documents under " +
           out_root.string());
}

} // namespace

fs::path find_project_dir(const std::string& project) {
  if (fs::is_directory(project)) return fs::path(project);
  for (const std::string& entry : split(getenv_or("XBATCH_PLUGIN_PATH", ""), ':')) {
    if (entry.empty()) continue;
    fs::path candidate = fs::path(entry) / project;
    if (fs::is_directory(candidate)) return candidate;
  }
  return {};
}

ParserRegistry project_registry(const fs::path& project_dir, const PluginSet& plugins) {
  ParserRegistry registry = ParserRegistry::builtin();
  registry.set_plugins(&plugins);
  if (project_dir.empty()) return registry;
  fs::path file = project_dir / "config" / "criteria.yaml";
  if (!fs::exists(file)) return registry;
  YAML::Node doc;
  try {
    doc = YAML::LoadFile(file.string());
  } catch (const YAML::Exception& e) {
    throw ConfigError("cannot read " + file.string() + ": " + e.what());
  }
  for (const auto& kv : doc["criteria"]) {
    CriterionBinding b;
    b.id = kv.first.as<std::string>();
    const YAML::Node& v = kv.second;
    if (!v["series"] || !v["path"] || !v["attr"])
      throw ConfigError(file.string() + ": binding '" + b.id +
                        "' needs {series, path, attr}");
    b.series = v["series"].as<std::string>();
    b.path = v["path"].as<std::string>();
    b.attr = v["attr"].as<std::string>();
    if (v["universe"])
      for (const auto& u : v["universe"]) b.universe.push_back(u.as<std::string>());
    if (v["z_path"]) b.z_path = v["z_path"].as<std::string>();
    if (v["z_attr"]) b.z_attr = v["z_attr"].as<std::string>();
    registry.bind(std::move(b));
  }
  return registry;
}

PipelinePlan plan_pipeline(const Invocation& opts) {
  PipelinePlan plan;
  plan.opts = opts;
  if (opts.no_master_node)
    log_line("warning: --no-master-node is accepted but ignored (no ROS-style master here)");

  if (opts.pipeline.empty()) {
    plan.stages = opts.compare.empty() ? std::vector<int>{1, 2, 3, 4} : std::vector<int>{5};
  } else {
    plan.stages = opts.pipeline;
  }
  for (int s : plan.stages)
    if (s < 1 || s > 5) throw UsageError("--pipeline stages must be in 1..5, got " + std::to_string(s));
  for (size_t i = 1; i < plan.stages.size(); ++i)
    if (plan.stages[i] <= plan.stages[i - 1])
      throw UsageError("--pipeline stages must be strictly increasing (" +
                       std::to_string(plan.stages[i - 1]) + " before " +
                       std::to_string(plan.stages[i]) + ")");

  auto selected = [&](int s) {
    return std::find(plan.stages.begin(), plan.stages.end(), s) != plan.stages.end();
  };
  plan.has_batch_stages = selected(1) || selected(2) || selected(3) || selected(4);

  if (plan.has_batch_stages) {
    if (!opts.project) throw UsageError("--project is required for pipeline stages 1-4");
    if (opts.batch_criteria.empty())
      throw UsageError("--batch-criteria is required for pipeline stages 1-4");
    if (opts.batch_criteria.size() > 2)
      throw UsageError("--batch-criteria takes 1 or 2 tokens, got " +
                       std::to_string(opts.batch_criteria.size()));
    // --project may be a name or a directory path; the output tree keys on
    // the project name either way
    std::string project_name = project_name_of(*opts.project);
    if (project_name.empty()) throw UsageError("--project resolves to an empty name");
    plan.paths = batch_paths(opts.sierra_root, project_name, opts.batch_criteria);
  }
  if (selected(1)) {
    if (!opts.template_input_file) throw UsageError("stage 1 requires --template-input-file");
    if (!fs::exists(*opts.template_input_file))
      throw UsageError("--template-input-file " + *opts.template_input_file + " does not exist");
    if (!opts.exp_setup) throw UsageError("stage 1 requires --exp-setup");
    if (opts.n_runs < 1) throw UsageError("--n-runs must be >= 1");
  }
  if (selected(2) && !selected(1)) {
    if (!fs::exists(plan.paths.manifest_file()))
      throw UsageError("stage 2 needs stage-1 outputs; no manifest at " +
                       plan.paths.manifest_file().string());
    if (!fs::is_directory(plan.paths.exp_inputs()))
      throw UsageError("stage 2 needs generated inputs under " +
                       plan.paths.exp_inputs().string());
  }
  if (selected(3) && !selected(2)) {
    if (!fs::is_directory(plan.paths.exp_outputs()))
      throw UsageError("stage 3 needs run outputs under " + plan.paths.exp_outputs().string() +
                       " (run stage 2 first)");
  }
  if (selected(4) && !selected(3)) {
    if (!fs::is_directory(plan.paths.statistics()))
      throw UsageError("stage 4 needs statistics under " + plan.paths.statistics().string() +
                       " (run stage 3 first)");
  }
  if (selected(5)) {
    if (opts.compare.size() < 2)
      throw UsageError("stage 5 requires --compare with at least 2 batch roots");
    if (!opts.compare_mode || (*opts.compare_mode != "intra" && *opts.compare_mode != "inter"))
      throw UsageError("stage 5 requires --compare-mode intra|inter");
    if (!opts.compare_target) throw UsageError("stage 5 requires --compare-target");
    if (!opts.compare_output_root) throw UsageError("stage 5 requires --compare-output-root");
    for (const auto& root : opts.compare)
      if (!fs::exists(fs::path(root) / "manifest.yaml"))
        throw UsageError("--compare root " + root + " has no manifest.yaml");
  }
  return plan;
}

int run_pipeline(const PipelinePlan& plan) {
  StageContext ctx{plan, plan.opts, PluginSet::from_env(), PlatformPlugin{}, {}};
  if (plan.has_batch_stages) {
    // later stages take the platform from the batch manifest instead
    bool runs_stage1 = std::find(plan.stages.begin(), plan.stages.end(), 1) != plan.stages.end();
    if (runs_stage1) ctx.platform = resolve_platform(plan.opts.platform, ctx.plugins);
    if (plan.opts.project) ctx.project_dir = find_project_dir(*plan.opts.project);
  }

  int exit_code = 0;
  for (int stage : plan.stages) {
    auto t0 = std::chrono::steady_clock::now();
    int stage_rc = 0;
    std::string outcome = "ok";
    try {
      switch (stage) {
        case 1: run_stage1(ctx); break;
        case 2: stage_rc = run_stage2(ctx); break;
        case 3: run_stage3(ctx); break;
        case 4: run_stage4(ctx); break;
        case 5: run_stage5(ctx); break;
      }
    } catch (const std::exception& e) {
      log_line("stage " + std::to_string(stage) + ": error: " + e.what());
      stage_rc = 1;
      outcome = "fail";
    }
    double wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_line("stage " + std::to_string(stage) + ": " + outcome + " (" + fmt_double(wall_s) +
             " s)");
    if (plan.has_batch_stages) log_event(plan.paths, stage, outcome, wall_s);
    if (stage_rc != 0) {
      exit_code = stage_rc;
      if (stage != plan.stages.back())
        log_line("halting: stage " + std::to_string(stage) + " failed");
      break;
    }
  }
  return exit_code;
}

} // namespace xbatch
