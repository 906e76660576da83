#include "xbatch/compare.hpp"

#include <cmath>

namespace xbatch {

namespace {

std::string criteria_key(const BatchManifest& m) {
  return join(m.criteria_tokens(), " ");
}

PlotDocument load_target_doc(const fs::path& root, const std::string& target_id) {
  fs::path file = BatchPaths{root}.graphs() / "collated" / (target_id + ".json");
  if (!fs::exists(file))
    throw Error("batch " + root.string() + " has no stage-4 output for target '" + target_id +
                "' (expected " + file.string() + ")");
  try {
    return PlotDocument::from_json(nlohmann::json::parse(read_file(file)));
  } catch (const nlohmann::json::exception& e) {
    throw Error("cannot parse " + file.string() + ": " + e.what());
  }
}

std::string series_label_for(const ComparisonSpec& spec, const BatchManifest& m) {
  if (spec.mode == "intra_scenario") return m.controller.empty() ? m.scenario : m.controller;
  return m.scenario.empty() ? m.controller : m.scenario;
}

Provenance merged_provenance(const std::vector<BatchManifest>& manifests) {
  Provenance p;
  std::string key;
  for (const auto& m : manifests) key += make_provenance(m).manifest_digest + "|";
  p.manifest_digest = fnv1a_hex(key);
  p.criteria = manifests[0].criteria_tokens();
  p.generated = manifests[0].created;
  return p;
}

} // namespace

CompatibilityReport validate_comparability(const std::vector<BatchManifest>& manifests) {
  CompatibilityReport report;
  if (manifests.size() < 2) {
    report.differing.push_back("need at least 2 batches");
    return report;
  }
  const BatchManifest& first = manifests[0];

  auto check = [&](const std::string& field, auto getter) {
    bool all_equal = true;
    std::string values = getter(first);
    for (const auto& m : manifests) {
      if (getter(m) != getter(first)) {
        all_equal = false;
        values += " vs " + getter(m);
      }
    }
    (all_equal ? report.matching : report.differing).push_back(field + (all_equal ? "" : ": " + values));
    return all_equal;
  };

  bool criteria_eq = check("criteria", [](const BatchManifest& m) { return criteria_key(m); });
  bool scenario_eq = check("scenario", [](const BatchManifest& m) { return m.scenario; });
  bool controller_eq = check("controller", [](const BatchManifest& m) { return m.controller; });
  check("platform", [](const BatchManifest& m) { return m.platform_id; });

  report.intra_ok = criteria_eq && scenario_eq;
  report.inter_ok = criteria_eq && controller_eq;
  if (report.intra_ok && controller_eq)
    report.warnings.push_back(
        "intra-scenario comparison of identical controllers; series will coincide");
  if (report.inter_ok && scenario_eq)
    report.warnings.push_back(
        "inter-scenario comparison of identical scenarios; series will coincide");
  return report;
}

CompareResult compare(const ComparisonSpec& spec, const PluginSet& plugins) {
  if (spec.batch_roots.size() < 2)
    throw UsageError("--compare needs at least 2 batch roots, got " +
                     std::to_string(spec.batch_roots.size()));
  if (spec.mode != "intra_scenario" && spec.mode != "inter_scenario")
    throw UsageError("--compare-mode must be intra or inter");

  std::vector<BatchManifest> manifests;
  for (const fs::path& root : spec.batch_roots)
    manifests.push_back(BatchManifest::load(BatchPaths{root}.manifest_file()));

  CompatibilityReport report = validate_comparability(manifests);
  bool ok = spec.mode == "intra_scenario" ? report.intra_ok : report.inter_ok;
  if (!ok) {
    std::string why;
    for (const auto& d : report.differing) why += (why.empty() ? "" : "; ") + d;
    throw Error("batches are not comparable in " + spec.mode + " mode: " + why);
  }

  std::vector<PlotDocument> docs;
  for (const fs::path& root : spec.batch_roots)
    docs.push_back(load_target_doc(root, spec.target_id));
  for (size_t i = 1; i < docs.size(); ++i)
    if (docs[i].kind != docs[0].kind)
      throw Error("target '" + spec.target_id + "' is a " + docs[0].kind + " in " +
                  spec.batch_roots[0].string() + " but a " + docs[i].kind + " in " +
                  spec.batch_roots[i].string());
  if (docs[0].kind == "heatmap")
    for (size_t i = 0; i < docs.size(); ++i)
      if (docs[i].panels.empty())
        throw Error("batch " + spec.batch_roots[i].string() + " target '" + spec.target_id +
                    "' has no matrix panel to compare");

  CompareResult result;
  result.warnings = report.warnings;

  if (docs[0].kind == "linegraph") {
    PlotDocument merged;
    merged.kind = "linegraph";
    merged.title = spec.output_id;
    merged.x_axis = docs[0].x_axis;
    merged.y_axis = docs[0].y_axis;
    for (size_t i = 0; i < docs.size(); ++i) {
      if (docs[i].series.empty())
        throw Error("batch " + spec.batch_roots[i].string() + " target '" + spec.target_id +
                    "' has no series to compare");
      PlotSeries s = docs[i].series[0];
      s.label = series_label_for(spec, manifests[i]);
      merged.series.push_back(std::move(s));
    }
    merged.provenance = merged_provenance(manifests);
    if (!spec.model_ids.empty()) {
      std::vector<ModelPlugin> models;
      for (const auto& id : spec.model_ids) models.push_back(resolve_model(id, plugins));
      merged = overlay_models(merged, models, fs::temp_directory_path() / "xbatch-compare-models");
    }
    merged.validate();
    result.documents.emplace_back(spec.output_id, std::move(merged));
    return result;
  }

  // heatmap sources
  if (spec.as_lines) {
    bool by_row = *spec.as_lines == "row";
    if (!by_row && *spec.as_lines != "col")
      throw UsageError("--as-lines must be 'row' or 'col'");
    const MatrixPanel& ref = docs[0].panels.at(0);
    size_t n_lines = by_row ? ref.rows : ref.cols;
    for (size_t k = 0; k < n_lines; ++k) {
      PlotDocument line;
      line.kind = "linegraph";
      std::string slice_label = by_row ? ref.row_labels[k] : ref.col_labels[k];
      line.title = spec.output_id + " (" + (by_row ? "row " : "col ") + slice_label + ")";
      line.x_axis.label = by_row ? docs[0].x_axis.label : docs[0].y_axis.label;
      line.y_axis.label = docs[0].panels[0].title;
      for (size_t i = 0; i < docs.size(); ++i) {
        const MatrixPanel& p = docs[i].panels.at(0);
        if ((by_row && k >= p.rows) || (!by_row && k >= p.cols))
          throw Error("batch " + spec.batch_roots[i].string() + " heatmap is smaller than " +
                      spec.batch_roots[0].string() + "; cannot slice");
        PlotSeries s;
        s.label = series_label_for(spec, manifests[i]);
        size_t n = by_row ? p.cols : p.rows;
        for (size_t j = 0; j < n; ++j) {
          const std::string& tick = by_row ? p.col_labels[j] : p.row_labels[j];
          s.x.push_back(parse_double(tick).value_or(static_cast<double>(j)));
          double y = by_row ? p.cells[k][j] : p.cells[j][k];
          s.y.push_back(y);
          if (!p.band_lo.empty()) {
            s.band_lo.push_back(by_row ? p.band_lo[k][j] : p.band_lo[j][k]);
            s.band_hi.push_back(by_row ? p.band_hi[k][j] : p.band_hi[j][k]);
          }
        }
        line.series.push_back(std::move(s));
      }
      line.provenance = merged_provenance(manifests);
      line.validate();
      result.documents.emplace_back(
          spec.output_id + "." + (by_row ? "row" : "col") + std::to_string(k), std::move(line));
    }
    return result;
  }

  PlotDocument merged;
  merged.kind = "heatmap";
  merged.title = spec.output_id;
  merged.x_axis = docs[0].x_axis;
  merged.y_axis = docs[0].y_axis;
  for (size_t i = 0; i < docs.size(); ++i) {
    MatrixPanel p = docs[i].panels.at(0);
    p.title = series_label_for(spec, manifests[i]);
    merged.panels.push_back(std::move(p));
  }
  if (spec.diff_panel) {
    const MatrixPanel& a = merged.panels[0];
    const MatrixPanel& b = merged.panels[1];
    if (a.rows != b.rows || a.cols != b.cols)
      throw Error("difference panel needs equally shaped heatmaps");
    MatrixPanel diff;
    diff.title = a.title + " - " + b.title;
    diff.rows = a.rows;
    diff.cols = a.cols;
    diff.row_labels = a.row_labels;
    diff.col_labels = a.col_labels;
    for (size_t r = 0; r < a.rows; ++r) {
      std::vector<double> row;
      for (size_t c = 0; c < a.cols; ++c) row.push_back(a.cells[r][c] - b.cells[r][c]);
      diff.cells.push_back(std::move(row));
    }
    merged.panels.push_back(std::move(diff));
  }
  merged.provenance = merged_provenance(manifests);
  merged.validate();
  result.documents.emplace_back(spec.output_id, std::move(merged));
  return result;
}

} // namespace xbatch
