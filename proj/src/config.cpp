#include "kflow/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include "kflow/checkpoint.hpp"
#include "kflow/error.hpp"

namespace kflow {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("config key '" + std::string(key) + "': '" + std::string(v) + "' is not a finite number");
  }
  return out;
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("config line " + std::to_string(line_no) + ": missing '='");
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!kv.emplace(key, std::string(trim(line.substr(eq + 1)))).second) {
      throw ConfigError("config key '" + key + "' appears twice");
    }
  }
  return kv;
}

KeyValues load_key_values(const std::filesystem::path& path) {
  try {
    return parse_key_values(io::read_file(path));
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

const std::string* ConfigReader::find(std::string_view key) {
  auto it = kv_.find(key);
  if (it == kv_.end()) return nullptr;
  used_.emplace(key);
  return &it->second;
}

double ConfigReader::real(std::string_view key, double fallback) {
  const auto* v = find(key);
  return v ? parse_real(key, *v) : fallback;
}

std::size_t ConfigReader::count(std::string_view key, std::size_t fallback) {
  const auto* v = find(key);
  if (!v) return fallback;
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) {
    throw ConfigError("config key '" + std::string(key) + "': '" + *v + "' is not a non-negative integer");
  }
  return out;
}

std::uint64_t ConfigReader::seed(std::string_view key, std::uint64_t fallback) {
  return static_cast<std::uint64_t>(count(key, static_cast<std::size_t>(fallback)));
}

std::string ConfigReader::text(std::string_view key, std::string fallback) {
  const auto* v = find(key);
  return v ? *v : fallback;
}

std::vector<double> ConfigReader::reals(std::string_view key, std::vector<double> fallback) {
  const auto* v = find(key);
  if (!v) return fallback;
  std::vector<double> out;
  std::string_view rest = *v;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const auto item = trim(rest.substr(0, comma));
    if (!item.empty()) out.push_back(parse_real(key, item));
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
  }
  return out;
}

void ConfigReader::reject_unknown() const {
  std::string unknown;
  for (const auto& [k, v] : kv_)
    if (!used_.contains(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  if (!unknown.empty()) throw ConfigError("unknown config keys: " + unknown);
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_reals(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_real(v[i]);
  return out;
}

}  // namespace kflow
