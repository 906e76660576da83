#include <iostream>

#include <CLI11.hpp>

#include "xbatch/refsim.hpp"

int main(int argc, char** argv) {
  CLI::App app{"refsim: deterministic reference foraging simulator"};

  std::string input;
  unsigned long long seed = 0;
  std::string out_dir = "output";
  app.add_option("--input", input, "Input XML file")->required();
  auto* seed_opt = app.add_option("--seed", seed, "Override the seed from the input file");
  app.add_option("--output-dir", out_dir, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    xbatch::xml::Element root = xbatch::xml::parse_file(input);
    std::optional<std::uint64_t> seed_override;
    if (seed_opt->count() > 0) seed_override = seed;
    xbatch::refsim::SimConfig cfg = xbatch::refsim::parse_config(root, seed_override);
    xbatch::refsim::run(cfg, out_dir);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "refsim: error: " << e.what() << "\n";
    return 1;
  }
}
