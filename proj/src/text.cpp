#include "gpcrbert/text.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "gpcrbert/error.hpp"

namespace gpcrbert::text {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      return out;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

long long parse_int(std::string_view s, const std::string& what) {
  auto t = trim(s);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size()) {
    throw ParseError(what + ": not an integer: '" + t + "'");
  }
  return v;
}

std::size_t parse_size(std::string_view s, const std::string& what) {
  auto v = parse_int(s, what);
  if (v < 0) throw ParseError(what + ": must be non-negative");
  return static_cast<std::size_t>(v);
}

double parse_double(std::string_view s, const std::string& what) {
  auto t = trim(s);
  std::istringstream is(t);
  is.imbue(std::locale::classic());
  double v = 0.0;
  is >> v;
  if (t.empty() || is.fail() || !is.eof()) throw ParseError(what + ": not a number: '" + t + "'");
  return v;
}

bool parse_bool(std::string_view s, const std::string& what) {
  auto t = trim(s);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ParseError(what + ": not a boolean: '" + t + "'");
}

KeyValues parse_key_values(std::string_view content, const std::string& source) {
  KeyValues kv;
  std::size_t line_no = 0;
  for (const auto& raw : split(content, '\n')) {
    ++line_no;
    auto line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": expected `key = value`");
    }
    auto key = trim(std::string_view(line).substr(0, eq));
    auto value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ParseError(source + ":" + std::to_string(line_no) + ": empty key");
    if (!kv.emplace(key, value).second) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

}  // namespace gpcrbert::text
