// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "aftk/autodiff.hpp"
#include "aftk/checkpoint.hpp"

namespace aftk {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias-corrected moments:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig config = {});

  /// Applies one update from the parameters' current gradients.
  void step(double lr);
  std::size_t steps() const { return t_; }

  /// Moments and step count under "m.<i>", "v.<i>", "t".
  Checkpoint state() const;
  void load_state(const Checkpoint& state);

 private:
  std::vector<Var> params_;
  AdamConfig config_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

double global_grad_norm(const std::vector<Var>& params);
/// Rescales gradients so their global L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(const std::vector<Var>& params, double max_norm);

}  // namespace aftk
