#include "xbatch/exec.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <sys/wait.h>

#include <yaml-cpp/yaml.h>

namespace xbatch {

namespace {

std::string substitute_one(std::string s, const std::string& key, const std::string& value) {
  std::string ph = "{" + key + "}";
  for (size_t pos = s.find(ph); pos != std::string::npos; pos = s.find(ph, pos + value.size()))
    s.replace(pos, ph.size(), value);
  return s;
}

int run_shell(const std::string& cmd) {
  int status = std::system(cmd.c_str());
  if (status < 0) return -1;
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 128;
}

std::optional<std::string> env_var(const char* name) {
  const char* v = std::getenv(name);
  if (!v) return std::nullopt;
  return std::string(v);
}

std::string default_remote_shell() {
  return getenv_or("XBATCH_REMOTE_SHELL", "ssh {host} {cmd}");
}

} // namespace

ExpRange parse_exp_range(const std::optional<std::string>& text, size_t cardinality) {
  if (cardinality == 0) throw Error("batch has no experiments");
  if (!text) return {0, cardinality - 1};
  auto parts = split(*text, ':');
  std::optional<long long> lo, hi;
  if (parts.size() == 2) {
    lo = parse_int(parts[0]);
    hi = parse_int(parts[1]);
  }
  if (!lo || !hi || *lo < 0 || *hi < 0)
    throw UsageError("--exp-range must look like L:H, got '" + *text + "'");
  if (*lo > *hi)
    throw UsageError("--exp-range " + *text + ": lower bound exceeds upper bound");
  if (static_cast<size_t>(*hi) >= cardinality)
    throw UsageError("--exp-range " + *text + ": batch has only " + std::to_string(cardinality) +
                     " experiments");
  return {static_cast<size_t>(*lo), static_cast<size_t>(*hi)};
}

std::string CommandFile::text() const {
  std::string out;
  for (const std::string& line : lines) {
    out += line;
    out += '\n';
  }
  return out;
}

CommandFile generate_command_file(const BatchPaths& paths, const PlatformPlugin& platform,
                                  const SeedTable& seeds, size_t exp, size_t n_runs) {
  if (n_runs < 1) throw Error("experiment " + std::to_string(exp) + " has no runs");
  std::vector<size_t> missing;
  for (size_t r = 0; r < n_runs; ++r)
    if (!fs::exists(paths.run_input(exp, r))) missing.push_back(r);
  if (!missing.empty()) {
    std::string idx;
    for (size_t m : missing) idx += (idx.empty() ? "" : ",") + std::to_string(m);
    throw Error("exp" + std::to_string(exp) + ": missing generated inputs for runs {" + idx +
                "} (run stage 1 first)");
  }

  CommandFile cf;
  cf.exp = exp;
  for (size_t r = 0; r < n_runs; ++r) {
    // paths relative to the batch root; the run's working dir is its output dir
    std::string out_dir = "exp-outputs/exp" + std::to_string(exp) + "/run" + std::to_string(r);
    std::string input = "../../../exp-inputs/exp" + std::to_string(exp) + "/run" +
                        std::to_string(r) + "/input.xml";
    std::string launch = substitute_one(platform.launch_template, "input", input);
    launch = substitute_one(launch, "seed", std::to_string(seeds.seeds[exp][r]));
    cf.lines.push_back("cd \"" + out_dir + "\" && " + launch + " > run.log 2>&1");
  }
  return cf;
}

int ExecEnvAdapter::total_slots() const {
  int total = 0;
  for (const NodeSpec& n : nodes) total += n.slots;
  return total;
}

ExecEnvAdapter adapter_local(const AdapterOptions& opts) {
  ExecEnvAdapter a;
  a.id = "hpc.local";
  int slots = opts.jobs_per_node.value_or(
      static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
  a.nodes = {{"", slots}};
  return a;
}

ExecEnvAdapter adapter_slurm(const AdapterOptions& opts) {
  auto nodelist = env_var("SLURM_JOB_NODELIST");
  if (!nodelist)
    throw ConfigError("hpc.slurm: SLURM_JOB_NODELIST is not set (not inside an allocation?)");
  int slots = 1;
  if (auto cpus = env_var("SLURM_CPUS_PER_TASK")) {
    auto v = parse_int(*cpus);
    if (!v || *v < 1) throw ConfigError("hpc.slurm: bad SLURM_CPUS_PER_TASK '" + *cpus + "'");
    slots = static_cast<int>(*v);
  }
  if (opts.jobs_per_node) slots = *opts.jobs_per_node;
  ExecEnvAdapter a;
  a.id = "hpc.slurm";
  a.job_id = env_var("SLURM_JOB_ID").value_or("");
  for (const std::string& host : expand_hostlist(*nodelist)) a.nodes.push_back({host, slots});
  if (a.nodes.empty()) throw ConfigError("hpc.slurm: SLURM_JOB_NODELIST expanded to no hosts");
  a.remote_shell = default_remote_shell();
  return a;
}

ExecEnvAdapter adapter_pbs(const AdapterOptions& opts) {
  auto nodefile = env_var("PBS_NODEFILE");
  if (!nodefile) throw ConfigError("hpc.pbs: PBS_NODEFILE is not set (not inside a job?)");
  if (!fs::exists(*nodefile))
    throw ConfigError("hpc.pbs: PBS_NODEFILE points to missing file " + *nodefile);
  int slots = 1;
  if (auto ppn = env_var("PBS_NUM_PPN")) {
    auto v = parse_int(*ppn);
    if (!v || *v < 1) throw ConfigError("hpc.pbs: bad PBS_NUM_PPN '" + *ppn + "'");
    slots = static_cast<int>(*v);
  }
  if (opts.jobs_per_node) slots = *opts.jobs_per_node;
  ExecEnvAdapter a;
  a.id = "hpc.pbs";
  std::ifstream in(*nodefile);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    bool seen = false;
    for (const NodeSpec& n : a.nodes) seen = seen || n.host == line;
    if (!seen) a.nodes.push_back({line, slots});
  }
  if (a.nodes.empty()) throw ConfigError("hpc.pbs: nodefile " + *nodefile + " lists no hosts");
  a.remote_shell = default_remote_shell();
  return a;
}

ExecEnvAdapter adapter_adhoc(const AdapterOptions& opts) {
  if (!opts.nodefile) throw ConfigError("hpc.adhoc requires --nodefile");
  if (!fs::exists(*opts.nodefile))
    throw ConfigError("hpc.adhoc: nodefile " + opts.nodefile->string() + " does not exist");
  ExecEnvAdapter a;
  a.id = "hpc.adhoc";
  std::ifstream in(*opts.nodefile);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    NodeSpec node;
    size_t colon = line.find(':');
    if (colon == std::string::npos) {
      node.host = line;
      node.slots = opts.jobs_per_node.value_or(1);
    } else {
      node.host = line.substr(0, colon);
      auto v = parse_int(line.substr(colon + 1));
      if (!v || *v < 1)
        throw ConfigError("hpc.adhoc: bad slots in nodefile line '" + line + "'");
      node.slots = static_cast<int>(*v);
    }
    a.nodes.push_back(node);
  }
  if (a.nodes.empty())
    throw ConfigError("hpc.adhoc: nodefile " + opts.nodefile->string() + " lists no hosts");
  a.remote_shell = default_remote_shell();
  return a;
}

ExecEnvAdapter make_adapter(const std::string& id, const AdapterOptions& opts) {
  if (id == "hpc.local") return adapter_local(opts);
  if (id == "hpc.slurm") return adapter_slurm(opts);
  if (id == "hpc.pbs") return adapter_pbs(opts);
  if (id == "hpc.adhoc") return adapter_adhoc(opts);
  throw UsageError("unknown --exec-env '" + id +
                   "' (supported: hpc.local, hpc.slurm, hpc.pbs, hpc.adhoc)");
}

std::vector<std::string> expand_hostlist(const std::string& hostlist) {
  std::vector<std::string> items;
  {
    std::string cur;
    int depth = 0;
    for (char c : hostlist) {
      if (c == '[') ++depth;
      if (c == ']') --depth;
      if (c == ',' && depth == 0) {
        if (!trim(cur).empty()) items.push_back(trim(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty()) items.push_back(trim(cur));
  }
  std::vector<std::string> hosts;
  for (const std::string& item : items) {
    size_t open = item.find('[');
    if (open == std::string::npos) {
      hosts.push_back(item);
      continue;
    }
    size_t close = item.find(']', open);
    if (close == std::string::npos)
      throw ConfigError("bad hostlist item '" + item + "': unterminated '['");
    std::string prefix = item.substr(0, open);
    std::string suffix = item.substr(close + 1);
    for (const std::string& range : split(item.substr(open + 1, close - open - 1), ',')) {
      size_t dash = range.find('-');
      if (dash == std::string::npos) {
        hosts.push_back(prefix + range + suffix);
        continue;
      }
      std::string a = range.substr(0, dash);
      std::string b = range.substr(dash + 1);
      auto lo = parse_int(a);
      auto hi = parse_int(b);
      if (!lo || !hi || *lo > *hi)
        throw ConfigError("bad hostlist range '" + range + "' in '" + item + "'");
      int width = a.size() > 1 && a[0] == '0' ? static_cast<int>(a.size()) : 0;
      for (long long v = *lo; v <= *hi; ++v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%0*lld", width, v);
        hosts.push_back(prefix + buf + suffix);
      }
    }
  }
  return hosts;
}

std::string emit_submit_script_slurm(const SubmitSpec& spec) {
  std::string s;
  s += "#!/bin/bash\n";
  s += "#SBATCH --job-name=" + spec.job_name + "\n";
  s += "#SBATCH --nodes=" + std::to_string(spec.nodes) + "\n";
  s += "#SBATCH --time=" + spec.walltime + "\n";
  s += "#SBATCH --cpus-per-task=" + std::to_string(spec.jobs_per_node) + "\n";
  s += "#SBATCH --export=ALL\n";
  s += "\n";
  s += spec.command + "\n";
  return s;
}

std::string emit_submit_script_pbs(const SubmitSpec& spec) {
  std::string s;
  s += "#!/bin/bash\n";
  s += "#PBS -N " + spec.job_name + "\n";
  s += "#PBS -l nodes=" + std::to_string(spec.nodes) +
       ":ppn=" + std::to_string(spec.jobs_per_node) + "\n";
  s += "#PBS -l walltime=" + spec.walltime + "\n";
  s += "\n";
  s += "cd \"$PBS_O_WORKDIR\"\n";
  s += spec.command + "\n";
  return s;
}

std::string DispatchPlan::text() const {
  std::string out = "# dispatch plan: env=" + env_id +
                    " parallelism=" + std::to_string(parallelism) +
                    (job_id.empty() ? "" : " job=" + job_id) + "\n";
  for (const PlanEntry& e : entries) {
    out += "exp" + std::to_string(e.exp) + " run" + std::to_string(e.run) + " host=" +
           (e.host.empty() ? "<local>" : e.host) + " :: " + e.wrapped + "\n";
  }
  return out;
}

namespace {

std::string wrap_command(const ExecEnvAdapter& adapter, const std::string& host,
                         const fs::path& batch_root, const std::string& line) {
  std::string in_root = "cd " + shell_quote(batch_root.string()) + " && " + line;
  if (host.empty()) return in_root;
  std::string wrapped = substitute_one(adapter.remote_shell, "host", host);
  return substitute_one(wrapped, "cmd", shell_quote(in_root));
}

// round-robin over per-node slots, so slot capacity shapes the assignment
std::vector<std::string> slot_hosts(const ExecEnvAdapter& adapter) {
  std::vector<std::string> slots;
  for (const NodeSpec& n : adapter.nodes)
    for (int s = 0; s < n.slots; ++s) slots.push_back(n.host);
  return slots;
}

} // namespace

DispatchPlan build_plan(const BatchPaths& paths, const PlatformPlugin& platform,
                        const SeedTable& seeds, const BatchManifest& manifest,
                        const ExecEnvAdapter& adapter, const ExpRange& range) {
  DispatchPlan plan;
  plan.env_id = adapter.id;
  plan.job_id = adapter.job_id;
  plan.parallelism = std::min<int>(adapter.total_slots(), static_cast<int>(manifest.n_runs));
  std::vector<std::string> slots = slot_hosts(adapter);
  for (size_t e = range.lo; e <= range.hi; ++e) {
    CommandFile cf = generate_command_file(paths, platform, seeds, e, manifest.n_runs);
    for (size_t r = 0; r < cf.lines.size(); ++r) {
      PlanEntry entry;
      entry.exp = e;
      entry.run = r;
      entry.host = slots[r % slots.size()];
      entry.core = cf.lines[r];
      entry.wrapped = wrap_command(adapter, entry.host, paths.root, cf.lines[r]);
      plan.entries.push_back(std::move(entry));
    }
  }
  return plan;
}

void save_exec_result(const fs::path& file, const ExecResult& result) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "experiment" << YAML::Value << result.exp;
  out << YAML::Key << "n_runs" << YAML::Value << result.runs.size();
  out << YAML::Key << "ok" << YAML::Value << result.ok_count;
  out << YAML::Key << "failed" << YAML::Value << result.fail_count;
  out << YAML::Key << "runs" << YAML::Value << YAML::BeginSeq;
  for (const RunResult& r : result.runs) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "run" << YAML::Value << r.run;
    out << YAML::Key << "exit" << YAML::Value << r.exit_code;
    out << YAML::Key << "wall_ms" << YAML::Value << r.wall_ms;
    out << YAML::Key << "attempts" << YAML::Value << r.attempts;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  write_file_atomic(file, std::string(out.c_str()) + "\n");
}

ExecResult load_exec_result(const fs::path& file) {
  YAML::Node doc = YAML::LoadFile(file.string());
  ExecResult res;
  res.exp = doc["experiment"].as<size_t>();
  res.ok_count = doc["ok"].as<size_t>();
  res.fail_count = doc["failed"].as<size_t>();
  for (const auto& r : doc["runs"]) {
    RunResult run;
    run.run = r["run"].as<size_t>();
    run.exit_code = r["exit"].as<int>();
    run.wall_ms = r["wall_ms"].as<double>();
    run.attempts = r["attempts"].as<int>();
    res.runs.push_back(run);
  }
  return res;
}

std::vector<ExecResult> run_batch(const BatchPaths& paths, const PlatformPlugin& platform,
                                  const SeedTable& seeds, const BatchManifest& manifest,
                                  const ExecEnvAdapter& adapter, const ExpRange& range,
                                  int retries) {
  std::vector<ExecResult> results;
  std::vector<std::string> slots = slot_hosts(adapter);

  for (size_t e = range.lo; e <= range.hi; ++e) {
    CommandFile cf = generate_command_file(paths, platform, seeds, e, manifest.n_runs);
    write_file_atomic(paths.output_dir(e) / "commands.txt", cf.text());
    for (size_t r = 0; r < manifest.n_runs; ++r)
      fs::create_directories(paths.run_output_dir(e, r));

    ExecResult result;
    result.exp = e;
    result.runs.resize(cf.lines.size());

    int workers = std::min<int>(adapter.total_slots(), static_cast<int>(cf.lines.size()));
    workers = std::max(workers, 1);
    std::atomic<size_t> next{0};
    auto work = [&]() {
      for (;;) {
        size_t j = next.fetch_add(1);
        if (j >= cf.lines.size()) return;
        const std::string& host = slots[j % slots.size()];
        std::string cmd = wrap_command(adapter, host, paths.root, cf.lines[j]);
        RunResult rr;
        rr.run = j;
        auto t0 = std::chrono::steady_clock::now();
        rr.exit_code = run_shell(cmd);
        rr.attempts = 1;
        while (rr.exit_code != 0 && rr.attempts <= retries) {
          rr.exit_code = run_shell(cmd);
          ++rr.attempts;
        }
        rr.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                         .count();
        result.runs[j] = rr;
      }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();

    for (const RunResult& rr : result.runs)
      rr.exit_code == 0 ? ++result.ok_count : ++result.fail_count;
    save_exec_result(paths.output_dir(e) / "exec.yaml", result);
    results.push_back(std::move(result));
  }
  return results;
}

} // namespace xbatch
