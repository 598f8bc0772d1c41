#pragma once

#include <cstdio>
#include <string>

namespace ahdc {

/// Shortest-ish deterministic text form of a real for CSV output.
inline std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace ahdc
