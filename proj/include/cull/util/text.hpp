#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cull {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

/// Parses the whole of `s` as a double; throws FormatError otherwise.
double parse_double(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);

}  // namespace cull
