// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>

#include <spdlog/spdlog.h>

namespace polysearch {

/// Process-wide logger writing to stderr. Level defaults to `warn` and can be
/// overridden with POLYSEARCH_LOG_LEVEL (trace|debug|info|warn|error|off).
spdlog::logger& log();

}  // namespace polysearch
