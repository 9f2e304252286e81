// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

#include "model.hpp"

namespace polysearch {

struct AdamOptions {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int halve_every = 10;  // epochs; 0 disables the decay
};

/// Adam with bias correction. Tensors for which `frozen(name)` returns true
/// are left untouched (their moments are not updated either).
class Adam {
 public:
  Adam(const ModelParams& like, AdamOptions options);

  void step(ModelParams& params, const ModelParams& grads, double learning_rate,
            const std::function<bool(const std::string&)>& frozen = {});

  /// learning_rate * 0.5^floor(epoch / halve_every)
  double rate_for_epoch(int epoch) const;
  const AdamOptions& options() const { return options_; }

 private:
  AdamOptions options_;
  ModelParams first_;
  ModelParams second_;
  long long steps_ = 0;
};

}  // namespace polysearch
