#ifndef XBATCH_TESTS_HELPERS_HPP
#define XBATCH_TESTS_HELPERS_HPP

#include <atomic>
#include <unistd.h>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace testutil {

namespace fs = std::filesystem;

// unique scratch directory, removed on destruction
class TempDir {
public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("xbatch-test-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter.fetch_add(1)));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& child) const { return path_ / child; }

private:
  fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline const char* refsim_template = R"(<refsim>
  <agents count="4" velocity="1.0" noise="0.1"/>
  <arena side="12"/>
  <time ticks="100"/>
  <seed value="1"/>
</refsim>
)";

} // namespace testutil

#endif
