#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace mfcl {

/// Shortest decimal form that reads back to the same double.
std::string format_double(double v);

std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

}  // namespace mfcl
