#pragma once

#include <cstdlib>
#include <iostream>
#include <string>

namespace cmr::log {

enum Level { kQuiet = 0, kWarn = 1, kInfo = 2 };

// Verbosity from CMR_LOG_LEVEL (0 silent, 1 warnings, 2 info). Default 1.
inline Level level() {
  static Level lvl = [] {
    const char* env = std::getenv("CMR_LOG_LEVEL");
    if (!env) return kWarn;
    int v = std::atoi(env);
    return v <= 0 ? kQuiet : v == 1 ? kWarn : kInfo;
  }();
  return lvl;
}

inline void warn(const std::string& msg) {
  if (level() >= kWarn) std::cerr << "[warn] " << msg << "\n";
}

inline void info(const std::string& msg) {
  if (level() >= kInfo) std::cerr << "[info] " << msg << "\n";
}

}  // namespace cmr::log
