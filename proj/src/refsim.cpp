#include "xbatch/refsim.hpp"

#include <fstream>
#include <vector>

namespace xbatch::refsim {

namespace {

// Counter-based generator so output depends only on the seed, not on any
// library's distribution implementation.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  int below(int n) { return static_cast<int>(next() % static_cast<std::uint64_t>(n)); }

  double unit() { return static_cast<double>(next() >> 11) * (1.0 / 9007199254740992.0); }

private:
  std::uint64_t state_;
};

struct Agent {
  int x = 0;
  int y = 0;
  int heading = 0;  // index into the 8-neighborhood
  bool carrying = false;
  double credit = 0.0;
};

constexpr int kDirX[8] = {1, 1, 0, -1, -1, -1, 0, 1};
constexpr int kDirY[8] = {0, 1, 1, 1, 0, -1, -1, -1};

int clamp(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

int sign(int v) { return v > 0 ? 1 : (v < 0 ? -1 : 0); }

double required_attr_num(const xml::Element& root, const std::string& path,
                         const std::string& attr) {
  const xml::Element* el = xml::resolve(root, path);
  if (!el) throw Error("refsim config: missing element " + path);
  const std::string* v = el->find_attr(attr);
  if (!v) throw Error("refsim config: missing attribute " + path + "@" + attr);
  auto num = parse_double(*v);
  if (!num) throw Error("refsim config: non-numeric " + path + "@" + attr + " = '" + *v + "'");
  return *num;
}

} // namespace

SimConfig parse_config(const xml::Element& root, std::optional<std::uint64_t> seed_override) {
  if (root.name != "refsim") throw Error("refsim config: root element must be <refsim>");
  SimConfig cfg;
  cfg.population = static_cast<int>(required_attr_num(root, "/refsim/agents", "count"));
  cfg.velocity = required_attr_num(root, "/refsim/agents", "velocity");
  cfg.noise = required_attr_num(root, "/refsim/agents", "noise");
  cfg.grid_side = static_cast<int>(required_attr_num(root, "/refsim/arena", "side"));
  cfg.duration_ticks = static_cast<long long>(required_attr_num(root, "/refsim/time", "ticks"));
  if (seed_override) {
    cfg.seed = *seed_override;
  } else {
    cfg.seed = static_cast<std::uint64_t>(required_attr_num(root, "/refsim/seed", "value"));
  }
  if (cfg.population < 1) throw Error("refsim config: agents@count must be a positive integer");
  if (cfg.velocity <= 0.0) throw Error("refsim config: agents@velocity must be positive");
  if (cfg.noise < 0.0 || cfg.noise > 1.0) throw Error("refsim config: agents@noise must be in [0,1]");
  if (cfg.grid_side < 3) throw Error("refsim config: arena@side must be >= 3");
  if (cfg.duration_ticks < 1) throw Error("refsim config: time@ticks must be >= 1");
  return cfg;
}

long long run(const SimConfig& cfg, const fs::path& out_dir) {
  const int side = cfg.grid_side;
  const int nest_x = side / 2;
  const int nest_y = side / 2;
  Rng rng(cfg.seed);

  std::vector<std::uint8_t> object(static_cast<size_t>(side) * side, 0);
  auto cell = [side](int x, int y) { return static_cast<size_t>(y) * side + x; };
  int n_objects = std::max(1, side * side / 10);
  for (int placed = 0; placed < n_objects;) {
    int x = rng.below(side);
    int y = rng.below(side);
    if ((x == nest_x && y == nest_y) || object[cell(x, y)]) continue;
    object[cell(x, y)] = 1;
    ++placed;
  }

  std::vector<Agent> agents(static_cast<size_t>(cfg.population));
  for (Agent& a : agents) {
    a.x = nest_x;
    a.y = nest_y;
    a.heading = rng.below(8);
  }

  std::vector<long long> pickups(static_cast<size_t>(side) * side, 0);

  fs::create_directories(out_dir);
  std::ofstream collected_csv(out_dir / "collected.csv");
  if (!collected_csv) throw Error("refsim: cannot write to " + out_dir.string());
  collected_csv << "t,collected\n";

  auto write_snapshot = [&](long long k) {
    std::ofstream snap(out_dir / ("spatial." + std::to_string(k) + ".csv"));
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        if (x) snap << ',';
        snap << pickups[cell(x, y)];
      }
      snap << '\n';
    }
  };

  long long collected = 0;
  const long long interval = std::max<long long>(1, cfg.duration_ticks / 10);

  for (long long t = 1; t <= cfg.duration_ticks; ++t) {
    for (Agent& a : agents) {
      a.credit += cfg.velocity;
      while (a.credit >= 1.0) {
        a.credit -= 1.0;
        if (a.carrying) {
          // home in on the nest; noise occasionally knocks the step off course
          if (rng.unit() < cfg.noise * 0.5) {
            int d = rng.below(8);
            a.x = clamp(a.x + kDirX[d], 0, side - 1);
            a.y = clamp(a.y + kDirY[d], 0, side - 1);
          } else {
            a.x += sign(nest_x - a.x);
            a.y += sign(nest_y - a.y);
          }
          if (a.x == nest_x && a.y == nest_y) {
            a.carrying = false;
            ++collected;
          }
        } else {
          if (rng.unit() < 0.2 + 0.8 * cfg.noise) a.heading = rng.below(8);
          a.x = clamp(a.x + kDirX[a.heading], 0, side - 1);
          a.y = clamp(a.y + kDirY[a.heading], 0, side - 1);
          size_t c = cell(a.x, a.y);
          if (object[c]) {
            object[c] = 0;
            a.carrying = true;
            ++pickups[c];
            // respawn elsewhere to keep the search field dense
            for (;;) {
              int x = rng.below(side);
              int y = rng.below(side);
              if ((x == nest_x && y == nest_y) || object[cell(x, y)]) continue;
              object[cell(x, y)] = 1;
              break;
            }
          }
        }
      }
    }
    collected_csv << t << ',' << collected << '\n';
    if (t % interval == 0) write_snapshot(t / interval - 1);
  }
  return collected;
}

} // namespace xbatch::refsim
