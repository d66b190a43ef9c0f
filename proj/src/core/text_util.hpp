#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace peft {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
// Fixed-point with the given number of decimals.
std::string format_fixed(double v, int decimals);

// "key = value" lines; blank lines and '#' comments skipped.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

std::size_t parse_size(std::string_view value, std::string_view key);
double parse_real(std::string_view value, std::string_view key);
bool parse_bool(std::string_view value, std::string_view key);
std::vector<double> parse_real_list(std::string_view value, std::string_view key);

}  // namespace peft
