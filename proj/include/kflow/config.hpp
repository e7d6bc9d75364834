#pragma once

// Flat key=value text configuration. One pair per line; '#' starts a
// comment; surrounding whitespace is ignored.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace kflow {

using KeyValues = std::map<std::string, std::string, std::less<>>;

// Throws ConfigError on a line without '=' or a duplicated key.
KeyValues parse_key_values(std::string_view text);
KeyValues load_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

// Typed lookups that remember which keys were consumed, so a caller can
// reject unknown keys once every section has read its own.
class ConfigReader {
 public:
  explicit ConfigReader(KeyValues kv) : kv_(std::move(kv)) {}

  double real(std::string_view key, double fallback);
  std::size_t count(std::string_view key, std::size_t fallback);
  std::uint64_t seed(std::string_view key, std::uint64_t fallback);
  std::string text(std::string_view key, std::string fallback);
  std::vector<double> reals(std::string_view key, std::vector<double> fallback);

  // Throws ConfigError listing keys nobody asked for.
  void reject_unknown() const;

 private:
  const std::string* find(std::string_view key);
  KeyValues kv_;
  std::set<std::string, std::less<>> used_;
};

std::string format_real(double v);
std::string format_reals(const std::vector<double>& v);

}  // namespace kflow
