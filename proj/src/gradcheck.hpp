// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

#include "common.hpp"

namespace polysearch {

inline constexpr double kFiniteDifferenceStep = 1e-5;

struct GradCheckReport {
  std::string component;
  double max_relative_error = 0.0;
  std::string worst_entry;  // "tensor[index]"
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Relative error used by every check: |a - n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric);

/// Central-difference derivative of `f` with respect to `x[i]`.
double central_difference(const std::function<double()>& f, double& x, double step = kFiniteDifferenceStep);

/// Compares analytic gradients against central finite differences (h = 1e-5,
/// float64) on a small random instance. Components:
///   "text"  - 4 SRU layers + projection + normalization, cosine readout,
///             train mode with a fixed dropout mask; all parameters and inputs
///   "image" - adapter + Weldon pooling + projection + normalization, cosine
///             readout; all parameters and the feature map
///   "loss"  - hardest-negative batch loss w.r.t. every embedding, at a point
///             away from hinge kinks and mining ties
///   "full"  - batch loss through both encoders w.r.t. every parameter
/// Throws ValidationError for an unknown component.
GradCheckReport gradient_check(std::string_view component, double tolerance, std::uint64_t seed = 1);

}  // namespace polysearch
