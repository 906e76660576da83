#ifndef XBATCH_COMPARE_HPP
#define XBATCH_COMPARE_HPP

#include <optional>
#include <string>
#include <vector>

#include "xbatch/expgen.hpp"
#include "xbatch/plot.hpp"

namespace xbatch {

struct ComparisonSpec {
  std::string mode;  // intra_scenario | inter_scenario
  std::vector<fs::path> batch_roots;
  std::string target_id;
  std::string output_id;
  std::vector<std::string> model_ids;
  std::optional<std::string> as_lines;  // row | col
  bool diff_panel = false;
};

// Total diagnosis of manifest compatibility, independent of mode.
struct CompatibilityReport {
  std::vector<std::string> matching;
  std::vector<std::string> differing;  // "field: a vs b" descriptions
  bool intra_ok = false;
  bool inter_ok = false;
  std::vector<std::string> warnings;
};

CompatibilityReport validate_comparability(const std::vector<BatchManifest>& manifests);

struct CompareResult {
  // file stem (without extension) -> merged document
  std::vector<std::pair<std::string, PlotDocument>> documents;
  std::vector<std::string> warnings;
};

// Stage 5. Read-only over the source batch roots.
CompareResult compare(const ComparisonSpec& spec, const PluginSet& plugins);

} // namespace xbatch

#endif
