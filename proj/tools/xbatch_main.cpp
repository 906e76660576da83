#include <iostream>

#include <CLI11.hpp>

#include "xbatch/pipeline.hpp"

using namespace xbatch;

int main(int argc, char** argv) {
  CLI::App app{"xbatch: declarative batch-experiment pipeline"};
  app.get_formatter()->column_width(34);

  Invocation opts;
  std::string template_file, project, controller, robot, scenario, exp_setup, exp_range,
      nodefile, compare_mode, compare_target, as_lines, compare_output_root;
  std::string compare_csv;
  unsigned long long master_seed = 0;

  app.add_option("--template-input-file", template_file,
                 "Template XML file with the common configuration");
  app.add_option("--platform", opts.platform, "Platform plugin id")->capture_default_str();
  app.add_option("--project", project, "Project name (and config directory)");
  app.add_option("--batch-criteria", opts.batch_criteria,
                 "1 (univariate) or 2 (bivariate) criteria tokens")
      ->expected(1, 2);
  app.add_option("--controller", controller, "Controller key into config/controllers.yaml");
  app.add_option("--robot", robot, "Robot key into config/robots.yaml");
  app.add_option("--scenario", scenario, "Scenario label recorded in the manifest");
  app.add_option("--exp-setup", exp_setup, "exp_setup.T<seconds>[.K<hz>]");
  app.add_option("--n-runs", opts.n_runs, "Experimental runs per experiment")
      ->capture_default_str();
  app.add_option("--pipeline", opts.pipeline, "Pipeline stages to run (default: 1 2 3 4)")
      ->expected(1, 5);
  app.add_option("--exp-range", exp_range, "Restrict stages 2-4 to experiments L:H (inclusive)");
  app.add_option("--exec-env", opts.exec_env, "hpc.local | hpc.slurm | hpc.pbs | hpc.adhoc")
      ->capture_default_str();
  app.add_option("--exec-jobs-per-node", opts.exec_jobs_per_node,
                 "Concurrent runs per node (local default: core count)");
  app.add_option("--nodefile", nodefile, "host[:slots] lines for hpc.adhoc");
  app.add_flag("--exec-dry-run", opts.exec_dry_run, "Print the dispatch plan, execute nothing");
  app.add_option("--retry", opts.retry, "Re-attempt failed runs up to K times")
      ->capture_default_str();
  app.add_option("--storage-medium", opts.storage_medium, "Storage plugin id")
      ->capture_default_str();
  app.add_option("--dist-stats", opts.dist_stats, "conf95 | bw | all")->capture_default_str();
  app.add_option("--reducer", opts.reducer, "final | mean | max | sum")->capture_default_str();
  app.add_flag("--platform-vc", opts.platform_vc,
               "Enable visual capture (frame processing in stages 3-4)");
  app.add_option("--render-cmd-opts", opts.render_cmd_opts,
                 "Extra arguments appended to the video encoder command");
  app.add_flag("--render-exec", opts.render_exec, "Execute emitted video encoder commands");
  app.add_option("--compare", compare_csv, "Comma-separated batch roots (stage 5)");
  app.add_option("--compare-mode", compare_mode, "intra | inter");
  app.add_option("--compare-target", compare_target, "Graph id to compare");
  app.add_option("--as-lines", as_lines, "Replot heatmap comparison as linegraphs: row | col");
  app.add_option("--compare-output-root", compare_output_root, "Output directory for stage 5");
  app.add_option("--compare-models", opts.compare_models, "Model plugin ids to overlay");
  app.add_flag("--compare-diff", opts.compare_diff, "Add an A-B difference panel");
  app.add_flag("--force-regen", opts.force_regen, "Regenerate seeds even if seeds.yaml exists");
  app.add_option("--sierra-root", opts.sierra_root, "Root directory for batch outputs")
      ->capture_default_str();
  auto* seed_opt = app.add_option("--master-seed", master_seed,
                                  "Master seed (default: XBATCH_MASTER_SEED or random)");
  app.add_flag("--no-master-node", opts.no_master_node, "Accepted and ignored");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  auto opt_str = [](const std::string& s) {
    return s.empty() ? std::optional<std::string>{} : std::optional<std::string>{s};
  };
  opts.template_input_file = opt_str(template_file);
  opts.project = opt_str(project);
  opts.controller = opt_str(controller);
  opts.robot = opt_str(robot);
  opts.scenario = opt_str(scenario);
  opts.exp_setup = opt_str(exp_setup);
  opts.exp_range = opt_str(exp_range);
  opts.nodefile = opt_str(nodefile);
  opts.compare_mode = opt_str(compare_mode);
  opts.compare_target = opt_str(compare_target);
  opts.as_lines = opt_str(as_lines);
  opts.compare_output_root = opt_str(compare_output_root);
  if (!compare_csv.empty())
    for (const auto& r : split(compare_csv, ','))
      if (!r.empty()) opts.compare.push_back(r);
  if (seed_opt->count() > 0) opts.master_seed = master_seed;

  std::string snapshot;
  for (int i = 1; i < argc; ++i) snapshot += (i > 1 ? " " : "") + std::string(argv[i]);
  opts.flags_snapshot = snapshot;

  try {
    PipelinePlan plan = plan_pipeline(opts);
    return run_pipeline(plan);
  } catch (const UsageError& e) {
    std::cerr << "xbatch: usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "xbatch: error: " << e.what() << "\n";
    return 1;
  }
}
