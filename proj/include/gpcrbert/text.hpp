#pragma once

// Small string helpers shared by the CSV and config readers.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace gpcrbert::text {

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

// Strict numeric parsing; `what` names the field in the error message.
std::size_t parse_size(std::string_view s, const std::string& what);
long long parse_int(std::string_view s, const std::string& what);
double parse_double(std::string_view s, const std::string& what);
bool parse_bool(std::string_view s, const std::string& what);

// Line-oriented `key = value` files; '#' starts a comment.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(std::string_view content, const std::string& source);
KeyValues read_key_values(const std::filesystem::path& path);

}  // namespace gpcrbert::text
