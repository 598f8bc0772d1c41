#include "ahdc/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace ahdc {

namespace {
std::mutex g_mutex;
WarningSink g_sink;
}  // namespace

void set_warning_sink(WarningSink sink) {
  std::lock_guard lock(g_mutex);
  g_sink = std::move(sink);
}

void warn(const std::string& message) {
  std::lock_guard lock(g_mutex);
  if (g_sink) {
    g_sink(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

void info(const std::string& message) {
  static const bool quiet = [] {
    const char* v = std::getenv("AHDC_QUIET");
    return v && std::string(v) == "1";
  }();
  if (quiet) return;
  std::lock_guard lock(g_mutex);
  std::cerr << message << '\n';
}

}  // namespace ahdc
