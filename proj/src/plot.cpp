#include "xbatch/plot.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <yaml-cpp/yaml.h>

namespace xbatch {

using nlohmann::json;
using nlohmann::ordered_json;

const char* const kDefaultVideoTemplate =
    "ffmpeg -y -framerate {framerate} -pattern_type glob -i {input_glob} {opts} {output}";

namespace {

json doubles_json(const std::vector<double>& v) {
  json arr = json::array();
  for (double d : v) arr.push_back(d);
  return arr;
}

std::vector<double> doubles_from(const json& arr) {
  std::vector<double> v;
  for (const auto& d : arr) v.push_back(d.is_null() ? std::nan("") : d.get<double>());
  return v;
}

json matrix_json(const Matrix& m) {
  json arr = json::array();
  for (const auto& row : m) arr.push_back(doubles_json(row));
  return arr;
}

Matrix matrix_from(const json& arr) {
  Matrix m;
  for (const auto& row : arr) m.push_back(doubles_from(row));
  return m;
}

} // namespace

ordered_json PlotDocument::to_json() const {
  ordered_json j;
  j["kind"] = kind;
  j["title"] = title;
  j["x_axis"] = {{"label", x_axis.label}, {"scale", x_axis.scale}};
  j["y_axis"] = {{"label", y_axis.label}, {"scale", y_axis.scale}};
  j["series"] = json::array();
  for (const PlotSeries& s : series) {
    ordered_json js;
    js["label"] = s.label;
    js["style"] = s.style;
    js["x"] = doubles_json(s.x);
    js["y"] = doubles_json(s.y);
    if (!s.band_lo.empty()) {
      js["band_lo"] = doubles_json(s.band_lo);
      js["band_hi"] = doubles_json(s.band_hi);
    }
    j["series"].push_back(js);
  }
  j["panels"] = json::array();
  for (const MatrixPanel& p : panels) {
    ordered_json jp;
    jp["title"] = p.title;
    jp["rows"] = p.rows;
    jp["cols"] = p.cols;
    jp["cells"] = matrix_json(p.cells);
    jp["row_labels"] = p.row_labels;
    jp["col_labels"] = p.col_labels;
    if (!p.band_lo.empty()) {
      jp["band_lo"] = matrix_json(p.band_lo);
      jp["band_hi"] = matrix_json(p.band_hi);
    }
    j["panels"].push_back(jp);
  }
  j["provenance"] = {{"manifest_digest", provenance.manifest_digest},
                     {"criteria", provenance.criteria},
                     {"generated", provenance.generated}};
  return j;
}

PlotDocument PlotDocument::from_json(const json& j) {
  PlotDocument d;
  d.kind = j.at("kind").get<std::string>();
  d.title = j.value("title", "");
  d.x_axis = {j.at("x_axis").value("label", ""), j.at("x_axis").value("scale", "linear")};
  d.y_axis = {j.at("y_axis").value("label", ""), j.at("y_axis").value("scale", "linear")};
  for (const auto& js : j.value("series", json::array())) {
    PlotSeries s;
    s.label = js.value("label", "");
    s.style = js.value("style", "solid");
    s.x = doubles_from(js.at("x"));
    s.y = doubles_from(js.at("y"));
    if (js.contains("band_lo")) {
      s.band_lo = doubles_from(js["band_lo"]);
      s.band_hi = doubles_from(js["band_hi"]);
    }
    d.series.push_back(std::move(s));
  }
  for (const auto& jp : j.value("panels", json::array())) {
    MatrixPanel p;
    p.title = jp.value("title", "");
    p.rows = jp.at("rows").get<size_t>();
    p.cols = jp.at("cols").get<size_t>();
    p.cells = matrix_from(jp.at("cells"));
    p.row_labels = jp.value("row_labels", std::vector<std::string>{});
    p.col_labels = jp.value("col_labels", std::vector<std::string>{});
    if (jp.contains("band_lo")) {
      p.band_lo = matrix_from(jp["band_lo"]);
      p.band_hi = matrix_from(jp["band_hi"]);
    }
    d.panels.push_back(std::move(p));
  }
  if (j.contains("provenance")) {
    d.provenance.manifest_digest = j["provenance"].value("manifest_digest", "");
    d.provenance.generated = j["provenance"].value("generated", "");
    for (const auto& c : j["provenance"].value("criteria", json::array()))
      d.provenance.criteria.push_back(c.get<std::string>());
  }
  return d;
}

void PlotDocument::validate() const {
  if (kind != "linegraph" && kind != "heatmap")
    throw Error("plot document: unknown kind '" + kind + "'");
  for (const PlotSeries& s : series) {
    if (s.x.size() != s.y.size())
      throw Error("plot document: series '" + s.label + "' has mismatched x/y lengths");
    if (!s.band_lo.empty()) {
      if (s.band_lo.size() != s.y.size() || s.band_hi.size() != s.y.size())
        throw Error("plot document: series '" + s.label + "' has mismatched band lengths");
      for (size_t i = 0; i < s.y.size(); ++i) {
        if (std::isnan(s.y[i])) continue;
        if (s.band_lo[i] > s.y[i] || s.y[i] > s.band_hi[i])
          throw Error("plot document: series '" + s.label + "' violates band containment at point " +
                      std::to_string(i));
      }
    }
  }
  for (const MatrixPanel& p : panels) {
    if (p.cells.size() != p.rows)
      throw Error("plot document: panel '" + p.title + "' row count mismatch");
    for (const auto& row : p.cells)
      if (row.size() != p.cols)
        throw Error("plot document: panel '" + p.title + "' is not rectangular");
    if (!p.band_lo.empty()) {
      auto shaped = [&](const Matrix& m) {
        if (m.size() != p.rows) return false;
        for (const auto& row : m)
          if (row.size() != p.cols) return false;
        return true;
      };
      if (!shaped(p.band_lo) || !shaped(p.band_hi))
        throw Error("plot document: panel '" + p.title + "' band matrices mismatch its shape");
    }
  }
}

GraphConfig load_graph_config(const fs::path& file) {
  GraphConfig config;
  if (!fs::exists(file)) throw ConfigError("no graph configuration at " + file.string());
  YAML::Node doc;
  try {
    doc = YAML::LoadFile(file.string());
  } catch (const YAML::Exception& e) {
    throw ConfigError("cannot read " + file.string() + ": " + e.what());
  }
  if (doc.IsNull() || !doc.IsDefined()) return config;
  static const std::set<std::string> known_top = {"graphs", "video_render_template"};
  for (const auto& kv : doc) {
    std::string key = kv.first.as<std::string>();
    if (!known_top.count(key))
      config.warnings.push_back("ignoring unknown key '" + key + "' in " + file.string());
  }
  if (doc["video_render_template"])
    config.video_render_template = doc["video_render_template"].as<std::string>();
  std::set<std::string> ids;
  for (const auto& g : doc["graphs"]) {
    GraphTarget t;
    if (!g["id"]) throw ConfigError(file.string() + ": graph target missing 'id'");
    t.id = g["id"].as<std::string>();
    if (!ids.insert(t.id).second)
      throw ConfigError(file.string() + ": duplicate graph id '" + t.id + "'");
    t.kind = g["kind"] ? g["kind"].as<std::string>() : "";
    if (t.kind != "linegraph" && t.kind != "heatmap" && t.kind != "video")
      throw ConfigError(file.string() + ": target '" + t.id + "' has invalid kind '" + t.kind +
                        "'");
    t.scope = g["scope"] ? g["scope"].as<std::string>() : "inter_exp";
    if (t.scope != "intra_exp" && t.scope != "inter_exp")
      throw ConfigError(file.string() + ": target '" + t.id + "' has invalid scope '" + t.scope +
                        "'");
    if (t.kind == "video" && t.scope != "intra_exp")
      throw ConfigError(file.string() + ": target '" + t.id +
                        "' is a video and must have scope intra_exp (snapshot frames)");
    if (!g["stem"]) throw ConfigError(file.string() + ": target '" + t.id + "' missing 'stem'");
    t.stem = g["stem"].as<std::string>();
    if (g["column"]) t.columns.push_back(g["column"].as<std::string>());
    if (g["columns"])
      for (const auto& c : g["columns"]) t.columns.push_back(c.as<std::string>());
    t.title = g["title"] ? g["title"].as<std::string>() : t.id;
    if (g["xlabel"]) t.xlabel = g["xlabel"].as<std::string>();
    if (g["ylabel"]) t.ylabel = g["ylabel"].as<std::string>();
    if (g["xscale"]) t.xscale = g["xscale"].as<std::string>();
    if (g["models"])
      for (const auto& m : g["models"]) t.models.push_back(m.as<std::string>());
    config.targets.push_back(std::move(t));
  }
  return config;
}

Provenance make_provenance(const BatchManifest& manifest) {
  Provenance p;
  std::string key = manifest.project;
  for (const auto& t : manifest.criteria_tokens()) key += "|" + t;
  key += "|" + std::to_string(manifest.master_seed) + "|" + std::to_string(manifest.n_runs);
  p.manifest_digest = fnv1a_hex(key);
  p.criteria = manifest.criteria_tokens();
  // batch creation time, not wall time: regeneration must be byte-stable
  p.generated = manifest.created;
  return p;
}

namespace {

std::string axis_scale_for(const GraphTarget& target, const BatchManifest& manifest) {
  if (!target.xscale.empty()) return target.xscale;
  return manifest.axes[0].geometric ? "log2" : "linear";
}

void band_series(PlotSeries& s, DistStats mode, const SummaryTable& summary) {
  size_t n = summary.rows;
  if (mode == DistStats::bw) {
    // box-whisker: center on the median so bands always contain the line
    for (size_t e = 0; e < n; ++e) {
      s.y.push_back(summary.stats.at("median")[e]);
      s.band_lo.push_back(summary.stats.at("q1")[e]);
      s.band_hi.push_back(summary.stats.at("q3")[e]);
    }
  } else {
    for (size_t e = 0; e < n; ++e) {
      s.y.push_back(summary.stats.at("mean")[e]);
      s.band_lo.push_back(summary.stats.at("ciL95")[e]);
      s.band_hi.push_back(summary.stats.at("ciH95")[e]);
    }
  }
}

} // namespace

PlotDocument gen_inter_linegraph(const SummaryTable& summary, const GraphTarget& target,
                                 const BatchManifest& manifest, DistStats mode) {
  if (manifest.bivariate())
    throw Error("target '" + target.id +
                "': inter-experiment linegraphs need a univariate batch; use kind: heatmap");
  PlotDocument doc;
  doc.kind = "linegraph";
  doc.title = target.title;
  doc.x_axis.label = target.xlabel.empty() ? manifest.axes[0].name : target.xlabel;
  doc.x_axis.scale = axis_scale_for(target, manifest);
  doc.y_axis.label = target.ylabel.empty() ? summary.column : target.ylabel;

  PlotSeries s;
  s.label = manifest.controller.empty() ? summary.column : manifest.controller;
  for (size_t e = 0; e < summary.rows; ++e) {
    double x = summary.row_numerics.empty() ? std::nan("") : summary.row_numerics[e];
    s.x.push_back(std::isnan(x) ? static_cast<double>(e) : x);
  }
  band_series(s, mode, summary);
  doc.series.push_back(std::move(s));
  doc.provenance = make_provenance(manifest);
  doc.validate();
  return doc;
}

PlotDocument gen_heatmap(const SummaryTable& summary, const GraphTarget& target,
                         const BatchManifest& manifest, DistStats mode) {
  if (!manifest.bivariate())
    throw Error("target '" + target.id +
                "': inter-experiment heatmaps need a bivariate batch; use kind: linegraph");
  PlotDocument doc;
  doc.kind = "heatmap";
  doc.title = target.title;
  doc.x_axis.label = target.xlabel.empty() ? manifest.axes[1].name : target.xlabel;
  doc.y_axis.label = target.ylabel.empty() ? manifest.axes[0].name : target.ylabel;

  MatrixPanel p;
  p.title = summary.column;
  p.rows = summary.rows;
  p.cols = summary.cols;
  p.row_labels = summary.row_labels;
  p.col_labels = summary.col_labels;
  const std::string center = mode == DistStats::bw ? "median" : "mean";
  const std::string lo = mode == DistStats::bw ? "q1" : "ciL95";
  const std::string hi = mode == DistStats::bw ? "q3" : "ciH95";
  for (size_t r = 0; r < summary.rows; ++r) {
    std::vector<double> row, row_lo, row_hi;
    for (size_t c = 0; c < summary.cols; ++c) {
      row.push_back(summary.cell(center, r, c));
      row_lo.push_back(summary.cell(lo, r, c));
      row_hi.push_back(summary.cell(hi, r, c));
    }
    p.cells.push_back(std::move(row));
    p.band_lo.push_back(std::move(row_lo));
    p.band_hi.push_back(std::move(row_hi));
  }
  doc.panels.push_back(std::move(p));
  doc.provenance = make_provenance(manifest);
  doc.validate();
  return doc;
}

PlotDocument gen_intra_linegraph(const fs::path& exp_stats_dir, const GraphTarget& target,
                                 const BatchManifest& manifest, DistStats mode) {
  auto table_for = [&](const std::string& stat) {
    fs::path file = exp_stats_dir / (target.stem + "." + stat + ".csv");
    if (!fs::exists(file))
      throw Error("target '" + target.id + "': missing " + file.string() +
                  " (re-run stage 3 with a matching --dist-stats)");
    return parse_csv_table(read_file(file), file.string());
  };
  const std::string center = mode == DistStats::bw ? "median" : "mean";
  const std::string lo_stat = mode == DistStats::bw ? "q1" : "ciL95";
  const std::string hi_stat = mode == DistStats::bw ? "q3" : "ciH95";
  DataTable center_t = table_for(center);
  DataTable lo_t = table_for(lo_stat);
  DataTable hi_t = table_for(hi_stat);

  PlotDocument doc;
  doc.kind = "linegraph";
  doc.title = target.title;
  auto idx = center_t.index_column();
  doc.x_axis.label = target.xlabel.empty() ? (idx ? center_t.columns[*idx] : "sample") : target.xlabel;
  doc.y_axis.label = target.ylabel.empty() ? target.stem : target.ylabel;
  if (!target.xscale.empty()) doc.x_axis.scale = target.xscale;

  std::vector<std::string> columns = target.columns;
  if (columns.empty()) {
    for (size_t i = 0; i < center_t.columns.size(); ++i)
      if (!idx || i != *idx) columns.push_back(center_t.columns[i]);
  }
  for (const std::string& col : columns) {
    auto ci = center_t.column_index(col);
    if (!ci)
      throw Error("target '" + target.id + "': no column '" + col + "' in " + target.stem +
                  " (available: " + join(center_t.columns, ", ") + ")");
    PlotSeries s;
    s.label = col;
    for (size_t i = 0; i < center_t.n_rows(); ++i) {
      s.x.push_back(idx ? center_t.rows[i][*idx] : static_cast<double>(i));
      s.y.push_back(center_t.rows[i][*ci]);
      s.band_lo.push_back(lo_t.rows[i][*ci]);
      s.band_hi.push_back(hi_t.rows[i][*ci]);
    }
    doc.series.push_back(std::move(s));
  }
  doc.provenance = make_provenance(manifest);
  doc.validate();
  return doc;
}

PlotDocument gen_frame_heatmap(const Matrix& frame, const GraphTarget& target,
                               const BatchManifest& manifest, long long k) {
  PlotDocument doc;
  doc.kind = "heatmap";
  doc.title = target.title + " (frame " + std::to_string(k) + ")";
  doc.x_axis.label = target.xlabel.empty() ? "x" : target.xlabel;
  doc.y_axis.label = target.ylabel.empty() ? "y" : target.ylabel;
  MatrixPanel p;
  p.title = target.stem;
  p.rows = frame.size();
  p.cols = frame.empty() ? 0 : frame[0].size();
  p.cells = frame;
  for (size_t r = 0; r < p.rows; ++r) p.row_labels.push_back(std::to_string(r));
  for (size_t c = 0; c < p.cols; ++c) p.col_labels.push_back(std::to_string(c));
  doc.panels.push_back(std::move(p));
  doc.provenance = make_provenance(manifest);
  doc.validate();
  return doc;
}

PlotDocument overlay_models(const PlotDocument& doc, const std::vector<ModelPlugin>& models,
                            const fs::path& workdir) {
  if (models.empty()) return doc;
  if (doc.series.empty()) throw Error("cannot overlay models on a document with no series");
  PlotDocument out = doc;
  const PlotSeries& empirical = doc.series[0];
  fs::create_directories(workdir);
  for (const ModelPlugin& model : models) {
    fs::path input = workdir / (model.id + ".input.csv");
    fs::path output = workdir / (model.id + ".output.csv");
    std::string csv = "x,y\n";
    for (size_t i = 0; i < empirical.x.size(); ++i)
      csv += fmt_double(empirical.x[i]) + "," + fmt_double(empirical.y[i]) + "\n";
    write_file_atomic(input, csv);
    fs::remove(output);

    std::string cmd = model.exec;
    auto replace = [&cmd](const std::string& ph, const std::string& v) {
      size_t pos = cmd.find(ph);
      if (pos != std::string::npos) cmd.replace(pos, ph.size(), v);
    };
    replace("{input}", shell_quote(input.string()));
    replace("{output}", shell_quote(output.string()));
    std::string ignored;
    int rc = run_capture("cd " + shell_quote(model.dir.string()) + " && " + cmd, ignored);
    if (rc != 0)
      throw Error("model '" + model.id + "' failed (exit " + std::to_string(rc) + ")");
    if (!fs::exists(output))
      throw Error("model '" + model.id + "' produced no output file");
    DataTable t = parse_csv_table(read_file(output), output.string());
    auto xi = t.column_index("x");
    auto yi = t.column_index("y");
    if (!xi || !yi)
      throw Error("model '" + model.id + "' output must have columns x,y");
    if (t.n_rows() != empirical.y.size())
      throw Error("model '" + model.id + "' returned " + std::to_string(t.n_rows()) +
                  " points for an empirical series of " + std::to_string(empirical.y.size()));
    PlotSeries s;
    s.label = model.id;
    s.style = "dashed";
    for (const auto& row : t.rows) {
      s.x.push_back(row[*xi]);
      s.y.push_back(row[*yi]);
    }
    out.series.push_back(std::move(s));
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// SVG rendering

namespace {

std::string f2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

double transform(double v, const std::string& scale) {
  if (scale == "log2") return std::log2(v);
  if (scale == "log10") return std::log10(v);
  return v;
}

std::vector<double> nice_ticks(double lo, double hi, int target) {
  std::vector<double> ticks;
  if (!(hi > lo)) {
    ticks.push_back(lo);
    return ticks;
  }
  double raw = (hi - lo) / target;
  double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double norm = raw / mag;
  double step = norm < 1.5 ? 1.0 : norm < 3.0 ? 2.0 : norm < 7.0 ? 5.0 : 10.0;
  step *= mag;
  // integer multiples of step, so the walk can neither drift nor stall
  long long i = static_cast<long long>(std::ceil(lo / step));
  for (int n = 0; n < 64; ++n, ++i) {
    double v = static_cast<double>(i) * step;
    if (v > hi + step * 1e-9) break;
    ticks.push_back(v);
  }
  if (ticks.empty()) ticks.push_back(lo);
  return ticks;
}

// ticks in data space for a (possibly log) axis
std::vector<double> axis_ticks(double lo, double hi, const std::string& scale) {
  if (scale == "log2" || scale == "log10") {
    double base = scale == "log2" ? 2.0 : 10.0;
    std::vector<double> ticks;
    double exp0 = std::floor(std::log(lo) / std::log(base) + 1e-9);
    for (int n = 0; n < 64; ++n) {
      double v = std::pow(base, exp0 + n);
      if (v > hi * (1.0 + 1e-9)) break;
      if (v >= lo * (1.0 - 1e-9)) ticks.push_back(v);
    }
    if (ticks.empty()) ticks.push_back(lo);
    return ticks;
  }
  return nice_ticks(lo, hi, 5);
}

struct HeatColor {
  int r, g, b;
};

// compact viridis-like gradient
HeatColor heat_color(double t) {
  static const HeatColor stops[] = {
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  if (std::isnan(t)) return {200, 200, 200};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  int i = std::min(3, static_cast<int>(t));
  double f = t - i;
  auto mix = [f](int a, int b) { return static_cast<int>(std::lround(a + f * (b - a))); };
  return {mix(stops[i].r, stops[i + 1].r), mix(stops[i].g, stops[i + 1].g),
          mix(stops[i].b, stops[i + 1].b)};
}

std::string rgb(const HeatColor& c) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

std::string render_linegraph(const PlotDocument& doc) {
  const double width = 800, height = 560;
  const double ml = 80, mr = 30, mt = 50, mb = 70;
  const double pw = width - ml - mr, ph = height - mt - mb;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool have = false;
  for (const PlotSeries& s : doc.series) {
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (std::isnan(s.x[i]) || std::isnan(s.y[i])) continue;
      double lo = s.band_lo.empty() ? s.y[i] : s.band_lo[i];
      double hi = s.band_hi.empty() ? s.y[i] : s.band_hi[i];
      if (!have) {
        xmin = xmax = s.x[i];
        ymin = lo;
        ymax = hi;
        have = true;
      } else {
        xmin = std::min(xmin, s.x[i]);
        xmax = std::max(xmax, s.x[i]);
        ymin = std::min(ymin, std::isnan(lo) ? s.y[i] : lo);
        ymax = std::max(ymax, std::isnan(hi) ? s.y[i] : hi);
      }
    }
  }
  std::string xscale = doc.x_axis.scale;
  if ((xscale == "log2" || xscale == "log10") && xmin <= 0) xscale = "linear";
  double txmin = transform(xmin, xscale), txmax = transform(xmax, xscale);
  if (txmax <= txmin) txmax = txmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  double ypad = (ymax - ymin) * 0.05;
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ml + (transform(x, xscale) - txmin) / (txmax - txmin) * pw; };
  auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + f2(width) + "\" height=\"" +
         f2(height) + "\" viewBox=\"0 0 " + f2(width) + " " + f2(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + f2(width / 2) + "\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
         xml_escape(doc.title) + "</text>\n";

  // axes frame
  svg += "<rect x=\"" + f2(ml) + "\" y=\"" + f2(mt) + "\" width=\"" + f2(pw) + "\" height=\"" +
         f2(ph) + "\" fill=\"none\" stroke=\"#444444\"/>\n";

  for (double t : axis_ticks(xmin, xmax, xscale)) {
    double x = px(t);
    if (x < ml - 0.5 || x > ml + pw + 0.5) continue;
    svg += "<line x1=\"" + f2(x) + "\" y1=\"" + f2(mt + ph) + "\" x2=\"" + f2(x) + "\" y2=\"" +
           f2(mt + ph + 5) + "\" stroke=\"#444444\"/>\n";
    svg += "<text x=\"" + f2(x) + "\" y=\"" + f2(mt + ph + 20) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
           tick_label(t) + "</text>\n";
  }
  for (double t : nice_ticks(ymin, ymax, 5)) {
    double y = py(t);
    if (y < mt - 0.5 || y > mt + ph + 0.5) continue;
    svg += "<line x1=\"" + f2(ml - 5) + "\" y1=\"" + f2(y) + "\" x2=\"" + f2(ml) + "\" y2=\"" +
           f2(y) + "\" stroke=\"#444444\"/>\n";
    svg += "<text x=\"" + f2(ml - 8) + "\" y=\"" + f2(y + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + tick_label(t) +
           "</text>\n";
  }
  svg += "<text x=\"" + f2(ml + pw / 2) + "\" y=\"" + f2(height - 20) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
         xml_escape(doc.x_axis.label) + "</text>\n";
  svg += "<text x=\"22\" y=\"" + f2(mt + ph / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 22 " +
         f2(mt + ph / 2) + ")\">" + xml_escape(doc.y_axis.label) + "</text>\n";

  for (size_t si = 0; si < doc.series.size(); ++si) {
    const PlotSeries& s = doc.series[si];
    const char* color = kPalette[si % 8];
    if (!s.band_lo.empty() && s.x.size() > 1) {
      std::string pts;
      for (size_t i = 0; i < s.x.size(); ++i)
        pts += f2(px(s.x[i])) + "," + f2(py(s.band_hi[i])) + " ";
      for (size_t i = s.x.size(); i-- > 0;)
        pts += f2(px(s.x[i])) + "," + f2(py(s.band_lo[i])) + " ";
      svg += "<polygon points=\"" + trim(pts) + "\" fill=\"" + color +
             "\" fill-opacity=\"0.18\" stroke=\"none\"/>\n";
    }
    std::string pts;
    for (size_t i = 0; i < s.x.size(); ++i) pts += f2(px(s.x[i])) + "," + f2(py(s.y[i])) + " ";
    std::string dash = s.style == "dashed" ? " stroke-dasharray=\"6 4\"" : "";
    if (s.x.size() > 1)
      svg += "<polyline points=\"" + trim(pts) + "\" fill=\"none\" stroke=\"" + color +
             "\" stroke-width=\"2\"" + dash + "/>\n";
    for (size_t i = 0; i < s.x.size(); ++i)
      svg += "<circle cx=\"" + f2(px(s.x[i])) + "\" cy=\"" + f2(py(s.y[i])) +
             "\" r=\"3\" fill=\"" + color + "\"/>\n";
  }

  // legend
  double ly = mt + 12;
  for (size_t si = 0; si < doc.series.size(); ++si) {
    const PlotSeries& s = doc.series[si];
    const char* color = kPalette[si % 8];
    std::string dash = s.style == "dashed" ? " stroke-dasharray=\"6 4\"" : "";
    svg += "<line x1=\"" + f2(ml + pw - 150) + "\" y1=\"" + f2(ly) + "\" x2=\"" +
           f2(ml + pw - 125) + "\" y2=\"" + f2(ly) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"" + dash + "/>\n";
    svg += "<text x=\"" + f2(ml + pw - 118) + "\" y=\"" + f2(ly + 4) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + xml_escape(s.label) + "</text>\n";
    ly += 16;
  }
  svg += "</svg>\n";
  return svg;
}

std::string render_heatmap(const PlotDocument& doc) {
  const size_t n_panels = std::max<size_t>(1, doc.panels.size());
  const double panel_w = 360, panel_h = 420;
  const double ml = 90, mt = 60, mb = 60, gap = 40, cbar_w = 18;
  const double width = ml + n_panels * (panel_w + gap) + cbar_w + 60;
  const double height = mt + panel_h + mb;

  double vmin = 0, vmax = 1;
  bool have = false;
  for (const MatrixPanel& p : doc.panels) {
    for (const auto& row : p.cells) {
      for (double v : row) {
        if (std::isnan(v)) continue;
        if (!have) {
          vmin = vmax = v;
          have = true;
        } else {
          vmin = std::min(vmin, v);
          vmax = std::max(vmax, v);
        }
      }
    }
  }
  if (vmax <= vmin) vmax = vmin + 1;

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + f2(width) + "\" height=\"" +
         f2(height) + "\" viewBox=\"0 0 " + f2(width) + " " + f2(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + f2(width / 2) + "\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
         xml_escape(doc.title) + "</text>\n";

  for (size_t pi = 0; pi < doc.panels.size(); ++pi) {
    const MatrixPanel& p = doc.panels[pi];
    double x0 = ml + pi * (panel_w + gap);
    double cw = panel_w / std::max<size_t>(1, p.cols);
    double chh = panel_h / std::max<size_t>(1, p.rows);
    svg += "<text x=\"" + f2(x0 + panel_w / 2) + "\" y=\"" + f2(mt - 10) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
           xml_escape(p.title) + "</text>\n";
    for (size_t r = 0; r < p.rows; ++r) {
      for (size_t c = 0; c < p.cols; ++c) {
        double v = p.cells[r][c];
        double t = (v - vmin) / (vmax - vmin);
        svg += "<rect x=\"" + f2(x0 + c * cw) + "\" y=\"" + f2(mt + r * chh) + "\" width=\"" +
               f2(cw) + "\" height=\"" + f2(chh) + "\" fill=\"" +
               rgb(heat_color(std::isnan(v) ? std::nan("") : t)) + "\"/>\n";
      }
    }
    svg += "<rect x=\"" + f2(x0) + "\" y=\"" + f2(mt) + "\" width=\"" + f2(panel_w) +
           "\" height=\"" + f2(panel_h) + "\" fill=\"none\" stroke=\"#444444\"/>\n";
    // row/col tick labels, thinned to at most 16 per side
    size_t rstep = std::max<size_t>(1, p.rows / 16);
    for (size_t r = 0; r < p.row_labels.size(); r += rstep)
      svg += "<text x=\"" + f2(x0 - 6) + "\" y=\"" + f2(mt + r * chh + chh / 2 + 4) +
             "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" +
             xml_escape(p.row_labels[r]) + "</text>\n";
    size_t cstep = std::max<size_t>(1, p.cols / 16);
    for (size_t c = 0; c < p.col_labels.size(); c += cstep)
      svg += "<text x=\"" + f2(x0 + c * cw + cw / 2) + "\" y=\"" + f2(mt + panel_h + 16) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
             xml_escape(p.col_labels[c]) + "</text>\n";
  }

  // colorbar
  double cx = ml + doc.panels.size() * (panel_w + gap);
  for (int i = 0; i < 64; ++i) {
    double t = 1.0 - static_cast<double>(i) / 63.0;
    svg += "<rect x=\"" + f2(cx) + "\" y=\"" + f2(mt + i * panel_h / 64.0) + "\" width=\"" +
           f2(cbar_w) + "\" height=\"" + f2(panel_h / 64.0 + 0.5) + "\" fill=\"" +
           rgb(heat_color(t)) + "\"/>\n";
  }
  svg += "<text x=\"" + f2(cx + cbar_w + 6) + "\" y=\"" + f2(mt + 10) +
         "\" font-family=\"sans-serif\" font-size=\"10\">" + tick_label(vmax) + "</text>\n";
  svg += "<text x=\"" + f2(cx + cbar_w + 6) + "\" y=\"" + f2(mt + panel_h) +
         "\" font-family=\"sans-serif\" font-size=\"10\">" + tick_label(vmin) + "</text>\n";

  svg += "<text x=\"" + f2(ml + panel_w / 2) + "\" y=\"" + f2(height - 18) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
         xml_escape(doc.x_axis.label) + "</text>\n";
  svg += "<text x=\"24\" y=\"" + f2(mt + panel_h / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 24 " +
         f2(mt + panel_h / 2) + ")\">" + xml_escape(doc.y_axis.label) + "</text>\n";
  svg += "</svg>\n";
  return svg;
}

} // namespace

std::string render_plot(const PlotDocument& doc) {
  doc.validate();
  return doc.kind == "heatmap" ? render_heatmap(doc) : render_linegraph(doc);
}

std::string emit_video_cmd(const fs::path& frames_dir, const std::string& render_template,
                           int framerate, const std::string& render_cmd_opts,
                           const fs::path& output_file) {
  size_t n_frames = 0;
  if (fs::is_directory(frames_dir))
    for (const auto& de : fs::directory_iterator(frames_dir))
      if (de.path().extension() == ".svg" || de.path().extension() == ".png") ++n_frames;
  if (n_frames == 0)
    throw Error("no rendered frames in " + frames_dir.string() + " to encode");

  std::string cmd = render_template.empty() ? kDefaultVideoTemplate : render_template;
  auto replace_all = [&cmd](const std::string& ph, const std::string& v) {
    for (size_t pos = cmd.find(ph); pos != std::string::npos; pos = cmd.find(ph, pos + v.size()))
      cmd.replace(pos, ph.size(), v);
  };
  replace_all("{framerate}", std::to_string(framerate));
  replace_all("{input_glob}", shell_quote((frames_dir / "*.svg").string()));
  replace_all("{output}", shell_quote(output_file.string()));
  if (cmd.find("{opts}") != std::string::npos) {
    replace_all(" {opts}", render_cmd_opts.empty() ? "" : " " + render_cmd_opts);
    replace_all("{opts}", render_cmd_opts);
  } else if (!render_cmd_opts.empty()) {
    cmd += " " + render_cmd_opts;
  }
  return cmd;
}

} // namespace xbatch
