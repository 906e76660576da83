#ifndef XBATCH_PLOT_HPP
#define XBATCH_PLOT_HPP

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xbatch/plugin.hpp"
#include "xbatch/stats.hpp"

namespace xbatch {

struct PlotAxis {
  std::string label;
  std::string scale = "linear";  // linear | log2 | log10

  bool operator==(const PlotAxis&) const = default;
};

struct PlotSeries {
  std::string label;
  std::string style = "solid";  // solid | dashed
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> band_lo;  // empty or same length as y
  std::vector<double> band_hi;

  bool operator==(const PlotSeries&) const = default;
};

struct MatrixPanel {
  std::string title;
  size_t rows = 0;
  size_t cols = 0;
  Matrix cells;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  Matrix band_lo;  // optional cellwise bands, empty when absent
  Matrix band_hi;

  bool operator==(const MatrixPanel&) const = default;
};

struct Provenance {
  std::string manifest_digest;
  std::vector<std::string> criteria;
  std::string generated;

  bool operator==(const Provenance&) const = default;
};

// Renderer-independent description of one deliverable; the JSON form is the
// canonical artifact, SVG is derived.
struct PlotDocument {
  std::string kind;  // linegraph | heatmap
  std::string title;
  PlotAxis x_axis;
  PlotAxis y_axis;
  std::vector<PlotSeries> series;
  std::vector<MatrixPanel> panels;
  Provenance provenance;

  bool operator==(const PlotDocument&) const = default;

  nlohmann::ordered_json to_json() const;
  static PlotDocument from_json(const nlohmann::json& j);
  std::string dump() const { return to_json().dump(2) + "\n"; }

  // shape checks + band containment (band_lo <= y <= band_hi pointwise)
  void validate() const;
};

// One entry of graphs.yaml.
struct GraphTarget {
  std::string id;
  std::string kind;   // linegraph | heatmap | video
  std::string scope;  // intra_exp | inter_exp
  std::string stem;
  std::vector<std::string> columns;
  std::string title;
  std::string xlabel;
  std::string ylabel;
  std::string xscale;  // empty: auto
  std::vector<std::string> models;
};

struct GraphConfig {
  std::vector<GraphTarget> targets;
  std::string video_render_template;  // empty: built-in default
  std::vector<std::string> warnings;  // unknown keys, ignored targets
};

GraphConfig load_graph_config(const fs::path& file);

Provenance make_provenance(const BatchManifest& manifest);

// Inter-experiment linegraph over a univariate summary. conf95 bands around
// the mean, or box-whisker mode: median with q1..q3 bands.
PlotDocument gen_inter_linegraph(const SummaryTable& summary, const GraphTarget& target,
                                 const BatchManifest& manifest, DistStats mode);

// Bivariate summary heatmap; cellwise bands carried for --as-lines replots.
PlotDocument gen_heatmap(const SummaryTable& summary, const GraphTarget& target,
                         const BatchManifest& manifest, DistStats mode);

// Intra-experiment time-series linegraph from a written stats bundle.
PlotDocument gen_intra_linegraph(const fs::path& exp_stats_dir, const GraphTarget& target,
                                 const BatchManifest& manifest, DistStats mode);

// Single spatial frame as a heatmap panel.
PlotDocument gen_frame_heatmap(const Matrix& frame, const GraphTarget& target,
                               const BatchManifest& manifest, long long k);

// Appends one dashed series per model, produced through the file contract
// ({input}: empirical x,y CSV; {output}: predicted x,y CSV). The empirical
// series is never touched.
PlotDocument overlay_models(const PlotDocument& doc, const std::vector<ModelPlugin>& models,
                            const fs::path& workdir);

// Deterministic standalone SVG for a valid document.
std::string render_plot(const PlotDocument& doc);

// Encoder command line; {framerate}, {input_glob}, {output} placeholders,
// user opts appended verbatim (or at {opts} when the template names it).
std::string emit_video_cmd(const fs::path& frames_dir, const std::string& render_template,
                           int framerate, const std::string& render_cmd_opts,
                           const fs::path& output_file);

extern const char* const kDefaultVideoTemplate;

} // namespace xbatch

#endif
