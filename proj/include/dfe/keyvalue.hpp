#pragma once

// Line-oriented `key = value` text with optional `[section]` headers and
// `#` comments. Shared by video headers and run configs.

#include <cstdint>
#include <string>
#include <vector>

namespace dfe {

struct KvEntry {
  std::string section;  // empty before the first header
  std::string key;
  std::string value;
  std::size_t line = 0;  // 1-based
};

// Throws DataError naming `source` and the line on malformed input.
std::vector<KvEntry> parse_kv(const std::string& text, const std::string& source);

// Shortest text that parses back to the same double.
std::string format_double(double v);

// "<source>:<line>: key '<key>'" prefixed ConfigError on bad values.
double kv_double(const KvEntry& e, const std::string& source);
std::uint64_t kv_u64(const KvEntry& e, const std::string& source);
bool kv_bool(const KvEntry& e, const std::string& source);

double parse_double_strict(const std::string& text);        // std::invalid_argument on junk
std::uint64_t parse_u64_strict(const std::string& text);

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);

}  // namespace dfe
