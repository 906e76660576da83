#ifndef XBATCH_REFSIM_HPP
#define XBATCH_REFSIM_HPP

#include <cstdint>
#include <optional>
#include <string>

#include "xbatch/xml.hpp"

namespace xbatch::refsim {

// Parsed <refsim> configuration. Every field is required in the XML; the
// seed may be overridden from the command line.
struct SimConfig {
  int population = 0;
  double velocity = 0.0;
  double noise = 0.0;
  int grid_side = 0;
  long long duration_ticks = 0;
  std::uint64_t seed = 0;
};

SimConfig parse_config(const xml::Element& root, std::optional<std::uint64_t> seed_override);

// Runs the foraging walk and writes collected.csv plus spatial.<k>.csv
// snapshots under out_dir. Returns the final collected count.
long long run(const SimConfig& cfg, const fs::path& out_dir);

} // namespace xbatch::refsim

#endif
