#ifndef XBATCH_UTIL_HPP
#define XBATCH_UTIL_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace xbatch {

namespace fs = std::filesystem;

// Base error for everything the tool reports to the user.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad command line or bad flag combination.
class UsageError : public Error {
public:
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Bad configuration file, plugin manifest, or environment.
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

std::vector<std::string> split(const std::string& s, char delim);
std::string join(const std::vector<std::string>& parts, const std::string& sep);
std::string trim(const std::string& s);
bool starts_with(const std::string& s, const std::string& prefix);

// Strict numeric parses; nullopt on trailing garbage or empty input.
std::optional<long long> parse_int(const std::string& s);
std::optional<double> parse_double(const std::string& s);

// Minimal float formatting for file output: %.12g.
std::string fmt_double(double v);

// Wrap s in single quotes for POSIX shells.
std::string shell_quote(const std::string& s);

// splitmix64; the documented per-run seed hash builds on this.
std::uint64_t splitmix64(std::uint64_t x);

// FNV-1a over bytes; used for manifest digests in plot provenance.
std::uint64_t fnv1a(const std::string& bytes);
std::string fnv1a_hex(const std::string& bytes);

std::string read_file(const fs::path& p);
// Write via temp file + rename so readers never see partial content.
void write_file_atomic(const fs::path& p, const std::string& content);

std::string getenv_or(const std::string& name, const std::string& fallback);

// Run a shell command, capture stdout, return its exit code (-1 on spawn
// failure).
int run_capture(const std::string& cmd, std::string& output);

} // namespace xbatch

#endif
