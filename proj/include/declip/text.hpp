#pragma once

#include <charconv>
#include <cmath>
#include <string>

namespace declip {

// Shortest decimal text that parses back to the same double; "inf"/"-inf"/"nan" otherwise.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace declip
