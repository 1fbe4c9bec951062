#include "dfe/keyvalue.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>

#include "dfe/errors.hpp"

namespace dfe {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<KvEntry> parse_kv(const std::string& text, const std::string& source) {
  std::vector<KvEntry> out;
  std::string section;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw DataError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw DataError(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(where + ": expected 'key = value'");
    KvEntry e{section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
    if (e.key.empty()) throw DataError(where + ": empty key");
    out.push_back(std::move(e));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double_strict(const std::string& text) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last || text.empty()) {
    throw std::invalid_argument("not a number: '" + text + "'");
  }
  return v;
}

std::uint64_t parse_u64_strict(const std::string& text) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty()) {
    throw std::invalid_argument("not an unsigned integer: '" + text + "'");
  }
  return v;
}

namespace {

std::string where(const KvEntry& e, const std::string& source) {
  std::string s = source + ":" + std::to_string(e.line) + ": key '";
  if (!e.section.empty()) s += e.section + ".";
  return s + e.key + "'";
}

}  // namespace

double kv_double(const KvEntry& e, const std::string& source) {
  try {
    const double v = parse_double_strict(e.value);
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite");
    return v;
  } catch (const std::invalid_argument&) {
    throw ConfigError(where(e, source) + " expects a number, got '" + e.value + "'");
  }
}

std::uint64_t kv_u64(const KvEntry& e, const std::string& source) {
  try {
    return parse_u64_strict(e.value);
  } catch (const std::invalid_argument&) {
    throw ConfigError(where(e, source) + " expects an unsigned integer, got '" + e.value + "'");
  }
}

bool kv_bool(const KvEntry& e, const std::string& source) {
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  throw ConfigError(where(e, source) + " expects true/false, got '" + e.value + "'");
}

}  // namespace dfe
