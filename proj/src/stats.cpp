#include "xbatch/stats.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace xbatch {

namespace {

constexpr double kZ95 = 1.96;  // normal-approximation 95% interval

double cell_or_nan(const std::string& text, const std::string& what, size_t line) {
  std::string t = trim(text);
  if (t.empty() || t == "nan" || t == "NaN") return std::nan("");
  auto v = parse_double(t);
  if (!v)
    throw Error(what + ": non-numeric cell '" + t + "' on line " + std::to_string(line + 1));
  return *v;
}

std::vector<std::string> csv_fields(const std::string& line) {
  return split(line, ',');
}

std::vector<std::string> csv_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      if (!cur.empty() && cur.back() == '\r') cur.pop_back();
      lines.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) lines.push_back(cur);
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

// sorted input; linear interpolation between closest ranks
double quantile_sorted(const std::vector<double>& v, double p) {
  if (v.empty()) return std::nan("");
  if (v.size() == 1) return v[0];
  double h = p * static_cast<double>(v.size() - 1);
  size_t lo = static_cast<size_t>(h);
  size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct CellStats {
  double mean, stddev, ciL, ciH, min, q1, median, q3, max;
};

CellStats stats_of(std::vector<double> values) {
  values.erase(std::remove_if(values.begin(), values.end(),
                              [](double v) { return std::isnan(v); }),
               values.end());
  CellStats s{};
  if (values.empty()) {
    s = {std::nan(""), std::nan(""), std::nan(""), std::nan(""), std::nan(""),
         std::nan(""), std::nan(""), std::nan(""), std::nan("")};
    return s;
  }
  double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  double half = kZ95 * s.stddev / std::sqrt(n);
  s.ciL = s.mean - half;
  s.ciH = s.mean + half;
  std::sort(values.begin(), values.end());
  s.min = values.front();
  s.max = values.back();
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.q3 = quantile_sorted(values, 0.75);
  return s;
}

} // namespace

std::optional<size_t> DataTable::column_index(const std::string& col) const {
  for (size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == col) return i;
  return std::nullopt;
}

std::optional<size_t> DataTable::index_column() const {
  if (columns.empty()) return std::nullopt;
  const std::string& c = columns[0];
  if (c == "t" || c == "time" || c == "step" || c == "tick") return 0;
  return std::nullopt;
}

DataTable parse_csv_table(const std::string& text, const std::string& name) {
  auto lines = csv_lines(text);
  if (lines.empty()) throw Error(name + ": empty CSV");
  DataTable table;
  table.name = name;
  table.columns = csv_fields(lines[0]);
  for (auto& c : table.columns) c = trim(c);
  for (size_t i = 1; i < lines.size(); ++i) {
    auto fields = csv_fields(lines[i]);
    if (fields.size() != table.columns.size())
      throw Error(name + ": ragged CSV row on line " + std::to_string(i + 1) + " (" +
                  std::to_string(fields.size()) + " fields, header has " +
                  std::to_string(table.columns.size()) + ")");
    std::vector<double> row;
    for (const auto& f : fields) row.push_back(cell_or_nan(f, name, i));
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string csv_from_table(const DataTable& table) {
  std::string out = join(table.columns, ",") + "\n";
  for (const auto& row : table.rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += std::isnan(row[i]) ? "" : fmt_double(row[i]);
    }
    out += '\n';
  }
  return out;
}

Matrix parse_csv_matrix(const std::string& text, const std::string& what) {
  auto lines = csv_lines(text);
  if (lines.empty()) throw Error(what + ": empty matrix CSV");
  Matrix m;
  for (size_t i = 0; i < lines.size(); ++i) {
    std::vector<double> row;
    for (const auto& f : csv_fields(lines[i])) row.push_back(cell_or_nan(f, what, i));
    if (!m.empty() && row.size() != m[0].size())
      throw Error(what + ": ragged matrix row on line " + std::to_string(i + 1));
    m.push_back(std::move(row));
  }
  return m;
}

std::string csv_from_matrix(const Matrix& m) {
  std::string out;
  for (const auto& row : m) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += fmt_double(row[i]);
    }
    out += '\n';
  }
  return out;
}

fs::path StorageDriver::table_file(const fs::path& run_out_dir, const std::string& stem) const {
  return run_out_dir / output_subdir / (stem + file_ext);
}

DataTable StorageDriver::read_table(const fs::path& run_out_dir, const std::string& stem) const {
  fs::path file = table_file(run_out_dir, stem);
  if (!fs::exists(file)) throw Error("missing output " + file.string());
  if (convert.empty()) return parse_csv_table(read_file(file), file.string());
  std::string cmd = convert;
  size_t pos = cmd.find("{input}");
  if (pos != std::string::npos) cmd.replace(pos, 7, shell_quote(file.string()));
  std::string out;
  int rc = run_capture(cmd, out);
  if (rc != 0)
    throw Error("storage converter for " + file.string() + " failed (exit " +
                std::to_string(rc) + ")");
  return parse_csv_table(out, file.string());
}

std::vector<long long> StorageDriver::list_snapshots(const fs::path& run_out_dir,
                                                     const std::string& stem) const {
  std::vector<long long> ks;
  fs::path dir = run_out_dir / output_subdir;
  if (!fs::is_directory(dir)) return ks;
  std::string prefix = stem + ".";
  for (const auto& de : fs::directory_iterator(dir)) {
    std::string fname = de.path().filename().string();
    if (!starts_with(fname, prefix) || !fname.ends_with(file_ext)) continue;
    std::string mid = fname.substr(prefix.size(), fname.size() - prefix.size() - file_ext.size());
    if (auto k = parse_int(mid)) ks.push_back(*k);
  }
  std::sort(ks.begin(), ks.end());
  return ks;
}

Matrix StorageDriver::read_snapshot(const fs::path& run_out_dir, const std::string& stem,
                                    long long k) const {
  fs::path file = run_out_dir / output_subdir / (stem + "." + std::to_string(k) + file_ext);
  if (!fs::exists(file)) throw Error("missing snapshot " + file.string());
  if (convert.empty()) return parse_csv_matrix(read_file(file), file.string());
  std::string cmd = convert;
  size_t pos = cmd.find("{input}");
  if (pos != std::string::npos) cmd.replace(pos, 7, shell_quote(file.string()));
  std::string out;
  int rc = run_capture(cmd, out);
  if (rc != 0)
    throw Error("storage converter for " + file.string() + " failed (exit " +
                std::to_string(rc) + ")");
  return parse_csv_matrix(out, file.string());
}

StorageDriver resolve_storage(const std::string& id, const PluginSet& plugins) {
  if (id == "storage.csv") return StorageDriver{};
  const PluginRef* ref = plugins.find("storage", id);
  if (!ref)
    throw ConfigError("storage plugin '" + id + "' not found (built-in: storage.csv)");
  StorageDriver d;
  d.id = id;
  d.plugin_dir = ref->dir;
  const YAML::Node& m = ref->manifest;
  if (m["file_ext"]) d.file_ext = m["file_ext"].as<std::string>();
  if (m["output_subdir"]) d.output_subdir = m["output_subdir"].as<std::string>();
  if (m["convert"]) d.convert = m["convert"].as<std::string>();
  return d;
}

RunStack collate_runs(const BatchPaths& paths, const StorageDriver& storage, size_t exp,
                      const std::string& stem, size_t n_runs) {
  RunStack stack;
  stack.exp = exp;
  stack.stem = stem;
  for (size_t r = 0; r < n_runs; ++r) {
    fs::path run_dir = paths.run_output_dir(exp, r);
    if (!fs::exists(storage.table_file(run_dir, stem))) {
      stack.skipped.push_back(r);
      continue;
    }
    DataTable table = storage.read_table(run_dir, stem);
    if (!stack.tables.empty()) {
      const DataTable& first = stack.tables[0];
      if (table.columns != first.columns)
        throw Error("exp" + std::to_string(exp) + "/" + stem + ": run" + std::to_string(r) +
                    " columns {" + join(table.columns, ",") + "} differ from run" +
                    std::to_string(stack.run_ids[0]) + " {" + join(first.columns, ",") + "}");
      if (table.n_rows() != first.n_rows())
        throw Error("exp" + std::to_string(exp) + "/" + stem + ": run" + std::to_string(r) +
                    " has " + std::to_string(table.n_rows()) + " rows but run" +
                    std::to_string(stack.run_ids[0]) + " has " +
                    std::to_string(first.n_rows()));
    }
    stack.tables.push_back(std::move(table));
    stack.run_ids.push_back(r);
  }
  if (stack.tables.empty())
    throw Error("exp" + std::to_string(exp) + "/" + stem + ": no readable run outputs");
  return stack;
}

DistStats dist_stats_from_name(const std::string& s) {
  if (s == "conf95") return DistStats::conf95;
  if (s == "bw") return DistStats::bw;
  if (s == "all") return DistStats::all;
  throw UsageError("--dist-stats must be conf95, bw, or all (got '" + s + "')");
}

std::vector<std::string> dist_stats_files(DistStats mode) {
  switch (mode) {
    case DistStats::conf95: return {"mean", "stddev", "ciL95", "ciH95"};
    case DistStats::bw: return {"mean", "min", "q1", "median", "q3", "max"};
    case DistStats::all:
      return {"mean", "stddev", "ciL95", "ciH95", "min", "q1", "median", "q3", "max"};
  }
  return {};
}

StatsBundle intra_exp_stats(const RunStack& stack) {
  const DataTable& first = stack.tables[0];
  StatsBundle bundle;
  bundle.columns = first.columns;
  bundle.n_rows = first.n_rows();
  const std::vector<std::string> ids = {"mean", "stddev", "ciL95", "ciH95", "min",
                                        "q1",   "median", "q3",    "max"};
  for (const auto& id : ids)
    bundle.cells[id] = Matrix(bundle.n_rows, std::vector<double>(bundle.columns.size()));
  std::vector<double> values;
  for (size_t i = 0; i < bundle.n_rows; ++i) {
    for (size_t j = 0; j < bundle.columns.size(); ++j) {
      values.clear();
      for (const DataTable& t : stack.tables) values.push_back(t.rows[i][j]);
      CellStats s = stats_of(values);
      bundle.cells["mean"][i][j] = s.mean;
      bundle.cells["stddev"][i][j] = s.stddev;
      bundle.cells["ciL95"][i][j] = s.ciL;
      bundle.cells["ciH95"][i][j] = s.ciH;
      bundle.cells["min"][i][j] = s.min;
      bundle.cells["q1"][i][j] = s.q1;
      bundle.cells["median"][i][j] = s.median;
      bundle.cells["q3"][i][j] = s.q3;
      bundle.cells["max"][i][j] = s.max;
    }
  }
  return bundle;
}

void write_stats_bundle(const fs::path& exp_stats_dir, const std::string& stem,
                        const StatsBundle& bundle, DistStats mode) {
  for (const std::string& stat : dist_stats_files(mode)) {
    DataTable t;
    t.columns = bundle.columns;
    t.rows = bundle.cells.at(stat);
    write_file_atomic(exp_stats_dir / (stem + "." + stat + ".csv"), csv_from_table(t));
  }
}

Reducer reducer_from_name(const std::string& s) {
  if (s == "final") return Reducer::final_value;
  if (s == "mean") return Reducer::mean;
  if (s == "max") return Reducer::max;
  if (s == "sum") return Reducer::sum;
  throw UsageError("--reducer must be final, mean, max, or sum (got '" + s + "')");
}

double reduce_column(const DataTable& table, size_t col, Reducer reducer) {
  if (table.rows.empty()) return std::nan("");
  switch (reducer) {
    case Reducer::final_value:
      return table.rows.back()[col];
    case Reducer::mean: {
      double sum = 0.0;
      for (const auto& row : table.rows) sum += row[col];
      return sum / static_cast<double>(table.rows.size());
    }
    case Reducer::max: {
      double m = table.rows[0][col];
      for (const auto& row : table.rows) m = std::max(m, row[col]);
      return m;
    }
    case Reducer::sum: {
      double sum = 0.0;
      for (const auto& row : table.rows) sum += row[col];
      return sum;
    }
  }
  return std::nan("");
}

SummaryTable inter_exp_stats(const BatchPaths& paths, const BatchManifest& manifest,
                             const StorageDriver& storage, const std::string& stem,
                             const std::string& column, Reducer reducer) {
  SummaryTable summary;
  summary.stem = stem;
  summary.column = column;
  summary.rows = manifest.rows;
  summary.cols = manifest.cols;
  for (const auto& l : manifest.axes[0].labels) {
    size_t pos = l.rfind('=');
    summary.row_labels.push_back(pos == std::string::npos ? l : l.substr(pos + 1));
  }
  summary.row_numerics = manifest.axes[0].numerics;
  if (manifest.bivariate()) {
    for (const auto& l : manifest.axes[1].labels) {
      size_t pos = l.rfind('=');
      summary.col_labels.push_back(pos == std::string::npos ? l : l.substr(pos + 1));
    }
  } else {
    summary.col_labels = {column};
  }

  const std::vector<std::string> ids = {"mean", "stddev", "ciL95", "ciH95", "min",
                                        "q1",   "median", "q3",    "max"};
  for (const auto& id : ids)
    summary.stats[id] = std::vector<double>(manifest.cardinality, std::nan(""));

  for (size_t e = 0; e < manifest.cardinality; ++e) {
    RunStack stack = collate_runs(paths, storage, e, stem, manifest.n_runs);
    auto col_idx = stack.tables[0].column_index(column);
    if (!col_idx)
      throw Error("exp" + std::to_string(e) + "/" + stem + ": no column '" + column +
                  "' (available: " + join(stack.tables[0].columns, ", ") + ")");
    std::vector<double> reduced;
    for (const DataTable& t : stack.tables) reduced.push_back(reduce_column(t, *col_idx, reducer));
    CellStats s = stats_of(reduced);
    summary.stats["mean"][e] = s.mean;
    summary.stats["stddev"][e] = s.stddev;
    summary.stats["ciL95"][e] = s.ciL;
    summary.stats["ciH95"][e] = s.ciH;
    summary.stats["min"][e] = s.min;
    summary.stats["q1"][e] = s.q1;
    summary.stats["median"][e] = s.median;
    summary.stats["q3"][e] = s.q3;
    summary.stats["max"][e] = s.max;
  }
  return summary;
}

void save_summary(const fs::path& collated_dir, const SummaryTable& summary) {
  const std::vector<std::string> ids = {"mean", "stddev", "ciL95", "ciH95", "min",
                                        "q1",   "median", "q3",    "max"};
  if (summary.cols == 1) {
    std::string out = "exp,label,x," + join(ids, ",") + "\n";
    for (size_t e = 0; e < summary.rows; ++e) {
      out += std::to_string(e) + "," + summary.row_labels[e] + ",";
      double x = summary.row_numerics.empty() ? std::nan("") : summary.row_numerics[e];
      out += std::isnan(x) ? "" : fmt_double(x);
      for (const auto& id : ids) out += "," + fmt_double(summary.stats.at(id)[e]);
      out += "\n";
    }
    write_file_atomic(collated_dir / (summary.stem + "." + summary.column + ".csv"), out);
    return;
  }
  for (const auto& id : ids) {
    std::string out = "label," + join(summary.col_labels, ",") + "\n";
    for (size_t r = 0; r < summary.rows; ++r) {
      out += summary.row_labels[r];
      for (size_t c = 0; c < summary.cols; ++c)
        out += "," + fmt_double(summary.cell(id, r, c));
      out += "\n";
    }
    write_file_atomic(collated_dir / (summary.stem + "." + summary.column + "." + id + ".csv"),
                      out);
  }
}

SummaryTable load_summary(const fs::path& collated_dir, const std::string& stem,
                          const std::string& column) {
  SummaryTable summary;
  summary.stem = stem;
  summary.column = column;
  const std::vector<std::string> ids = {"mean", "stddev", "ciL95", "ciH95", "min",
                                        "q1",   "median", "q3",    "max"};
  fs::path univariate = collated_dir / (stem + "." + column + ".csv");
  if (fs::exists(univariate)) {
    DataTable t = parse_csv_table(read_file(univariate), univariate.string());
    // columns: exp,label,x,<stats> — label column parses as NaN, keep raw labels
    auto lines = split(read_file(univariate), '\n');
    summary.cols = 1;
    summary.rows = t.n_rows();
    for (size_t i = 1; i <= summary.rows; ++i) {
      auto fields = split(lines[i], ',');
      summary.row_labels.push_back(fields[1]);
    }
    summary.col_labels = {column};
    for (size_t s = 0; s < ids.size(); ++s) {
      std::vector<double> cells;
      for (size_t r = 0; r < summary.rows; ++r) cells.push_back(t.rows[r][3 + s]);
      summary.stats[ids[s]] = std::move(cells);
    }
    for (size_t r = 0; r < summary.rows; ++r) summary.row_numerics.push_back(t.rows[r][2]);
    return summary;
  }
  fs::path mean_file = collated_dir / (stem + "." + column + ".mean.csv");
  if (!fs::exists(mean_file))
    throw Error("no collated summary for " + stem + "." + column + " under " +
                collated_dir.string() + " (run stage 3?)");
  for (const auto& id : ids) {
    fs::path file = collated_dir / (stem + "." + column + "." + id + ".csv");
    auto lines = csv_lines(read_file(file));
    if (lines.empty()) throw Error("empty summary matrix " + file.string());
    auto header = split(lines[0], ',');
    summary.col_labels.assign(header.begin() + 1, header.end());
    summary.cols = summary.col_labels.size();
    summary.rows = lines.size() - 1;
    std::vector<double> cells;
    std::vector<std::string> row_labels;
    for (size_t i = 1; i < lines.size(); ++i) {
      auto fields = split(lines[i], ',');
      if (fields.size() != summary.cols + 1)
        throw Error("ragged summary matrix " + file.string());
      row_labels.push_back(fields[0]);
      for (size_t c = 1; c < fields.size(); ++c)
        cells.push_back(parse_double(fields[c]).value_or(std::nan("")));
    }
    summary.stats[id] = std::move(cells);
    summary.row_labels = row_labels;
  }
  summary.row_numerics.assign(summary.rows, std::nan(""));
  return summary;
}

std::vector<long long> heatmap_frames(const BatchPaths& paths, const StorageDriver& storage,
                                      size_t exp, const std::string& stem, size_t n_runs) {
  std::vector<size_t> runs;
  std::vector<long long> ks;
  bool first = true;
  for (size_t r = 0; r < n_runs; ++r) {
    fs::path run_dir = paths.run_output_dir(exp, r);
    auto found = storage.list_snapshots(run_dir, stem);
    if (found.empty() && !fs::is_directory(run_dir / storage.output_subdir)) continue;
    if (first) {
      ks = found;
      first = false;
    } else if (found != ks) {
      throw Error("exp" + std::to_string(exp) + "/" + stem + ": run" + std::to_string(r) +
                  " has a different snapshot set than run" + std::to_string(runs[0]));
    }
    runs.push_back(r);
  }
  if (runs.empty() || ks.empty())
    throw Error("exp" + std::to_string(exp) + "/" + stem + ": no snapshots found");

  fs::path frames_dir = paths.stats_dir(exp) / "frames";
  for (long long k : ks) {
    Matrix acc;
    for (size_t idx = 0; idx < runs.size(); ++idx) {
      Matrix m = storage.read_snapshot(paths.run_output_dir(exp, runs[idx]), stem, k);
      if (idx == 0) {
        acc = std::move(m);
        continue;
      }
      if (m.size() != acc.size() || (m.size() && m[0].size() != acc[0].size()))
        throw Error("exp" + std::to_string(exp) + "/" + stem + "." + std::to_string(k) +
                    ": snapshot shape differs between runs");
      for (size_t i = 0; i < m.size(); ++i)
        for (size_t j = 0; j < m[i].size(); ++j) acc[i][j] += m[i][j];
    }
    for (auto& row : acc)
      for (double& v : row) v /= static_cast<double>(runs.size());
    write_file_atomic(frames_dir / (stem + "." + std::to_string(k) + ".csv"),
                      csv_from_matrix(acc));
  }
  return ks;
}

void write_stats_manifest(const fs::path& exp_stats_dir,
                          const std::map<std::string, RunStack>& stacks) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  for (const auto& [stem, stack] : stacks) {
    out << YAML::Key << stem << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "runs_used" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (size_t r : stack.run_ids) out << r;
    out << YAML::EndSeq;
    out << YAML::Key << "runs_skipped" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (size_t r : stack.skipped) out << r;
    out << YAML::EndSeq << YAML::EndMap;
  }
  out << YAML::EndMap;
  write_file_atomic(exp_stats_dir / "manifest.yaml", std::string(out.c_str()) + "\n");
}

} // namespace xbatch
