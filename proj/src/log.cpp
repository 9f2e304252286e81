// SPDX-License-Identifier: Apache-2.0
#include "log.hpp"

#include <cstdlib>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace polysearch {

spdlog::logger& log() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto l = spdlog::stderr_color_mt("polysearch");
    l->set_pattern("[%H:%M:%S] [%^%l%$] %v");
    l->set_level(spdlog::level::warn);
    if (const char* lvl = std::getenv("POLYSEARCH_LOG_LEVEL")) l->set_level(spdlog::level::from_str(lvl));
    return l;
  }();
  return *instance;
}

}  // namespace polysearch
