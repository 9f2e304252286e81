// SPDX-License-Identifier: Apache-2.0
#include "optimizer.hpp"

#include <cmath>

namespace polysearch {

Adam::Adam(const ModelParams& like, AdamOptions options)
    : options_(options), first_(like.zeros_like()), second_(like.zeros_like()) {}

void Adam::step(ModelParams& params, const ModelParams& grads, double learning_rate,
                const std::function<bool(const std::string&)>& frozen) {
  ++steps_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double eps = options_.epsilon;
  ModelParams::for_each_tensor(
      [&](const std::string& name, auto& p, const auto& g, auto& m, auto& v) {
        if (p.size() == 0 || (frozen && frozen(name))) return;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
        p.array() -= learning_rate * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
      },
      params, grads, first_, second_);
}

double Adam::rate_for_epoch(int epoch) const {
  if (options_.halve_every <= 0) return options_.learning_rate;
  return options_.learning_rate * std::pow(0.5, epoch / options_.halve_every);
}

}  // namespace polysearch
