#ifndef XBATCH_STATS_HPP
#define XBATCH_STATS_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xbatch/exec.hpp"
#include "xbatch/expgen.hpp"
#include "xbatch/plugin.hpp"

namespace xbatch {

// Rectangular numeric table; NaN marks a missing cell.
struct DataTable {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  size_t n_rows() const { return rows.size(); }
  size_t n_cols() const { return columns.size(); }
  std::optional<size_t> column_index(const std::string& col) const;
  // first column when named like a time index (t, time, step, tick)
  std::optional<size_t> index_column() const;
};

using Matrix = std::vector<std::vector<double>>;

// CSV: comma delimiter, header row, '.' decimal; empty cell -> NaN; ragged
// rows are a hard error.
DataTable parse_csv_table(const std::string& text, const std::string& name);
std::string csv_from_table(const DataTable& table);

// headerless numeric matrix
Matrix parse_csv_matrix(const std::string& text, const std::string& what);
std::string csv_from_matrix(const Matrix& m);

// How run outputs are read. The built-in storage.csv reads
// <run>/output/<stem>.csv directly; plugin drivers may convert through an
// external command that prints CSV on stdout.
struct StorageDriver {
  std::string id = "storage.csv";
  std::string file_ext = ".csv";
  std::string output_subdir = "output";
  std::string convert;  // optional "cmd {input}" filter
  fs::path plugin_dir;

  fs::path table_file(const fs::path& run_out_dir, const std::string& stem) const;
  DataTable read_table(const fs::path& run_out_dir, const std::string& stem) const;
  // snapshot convention: <stem>.<k><ext>, k ascending
  std::vector<long long> list_snapshots(const fs::path& run_out_dir,
                                        const std::string& stem) const;
  Matrix read_snapshot(const fs::path& run_out_dir, const std::string& stem, long long k) const;
};

StorageDriver resolve_storage(const std::string& id, const PluginSet& plugins);

// All tables of one experiment/stem across runs; shapes already checked.
struct RunStack {
  size_t exp = 0;
  std::string stem;
  std::vector<DataTable> tables;
  std::vector<size_t> run_ids;      // which run produced tables[i]
  std::vector<size_t> skipped;      // runs with no readable output
};

RunStack collate_runs(const BatchPaths& paths, const StorageDriver& storage, size_t exp,
                      const std::string& stem, size_t n_runs);

// Cellwise distribution statistics across the runs of a stack.
struct StatsBundle {
  std::vector<std::string> columns;
  size_t n_rows = 0;
  // stat id in {mean, stddev, ciL95, ciH95, min, q1, median, q3, max}
  std::map<std::string, std::vector<std::vector<double>>> cells;
};

enum class DistStats { conf95, bw, all };
DistStats dist_stats_from_name(const std::string& s);
// which per-cell statistic files a mode writes
std::vector<std::string> dist_stats_files(DistStats mode);

StatsBundle intra_exp_stats(const RunStack& stack);
void write_stats_bundle(const fs::path& exp_stats_dir, const std::string& stem,
                        const StatsBundle& bundle, DistStats mode);

enum class Reducer { final_value, mean, max, sum };
Reducer reducer_from_name(const std::string& s);
double reduce_column(const DataTable& table, size_t col, Reducer reducer);

// One cell per experiment: distribution of the reduced per-run values.
// Univariate batches have cols == 1.
struct SummaryTable {
  std::string stem;
  std::string column;
  size_t rows = 0;
  size_t cols = 0;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<double> row_numerics;  // univariate x values (NaN when none)
  std::map<std::string, std::vector<double>> stats;  // stat id -> row-major cells

  double cell(const std::string& stat, size_t r, size_t c) const {
    return stats.at(stat)[r * cols + c];
  }
};

SummaryTable inter_exp_stats(const BatchPaths& paths, const BatchManifest& manifest,
                             const StorageDriver& storage, const std::string& stem,
                             const std::string& column, Reducer reducer);

void save_summary(const fs::path& collated_dir, const SummaryTable& summary);
SummaryTable load_summary(const fs::path& collated_dir, const std::string& stem,
                          const std::string& column);

// Mean of each snapshot matrix across runs, written to
// statistics/exp<i>/frames/<stem>.<k>.csv. Returns the snapshot indices.
std::vector<long long> heatmap_frames(const BatchPaths& paths, const StorageDriver& storage,
                                      size_t exp, const std::string& stem, size_t n_runs);

// Stage-3 record of what was processed for one experiment.
void write_stats_manifest(const fs::path& exp_stats_dir,
                          const std::map<std::string, RunStack>& stacks);

} // namespace xbatch

#endif
