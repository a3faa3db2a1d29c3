// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient checks and the registry of checked operations.
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "aftk/autodiff.hpp"

namespace aftk {

using ScalarFn = std::function<Var(const std::vector<Var>&)>;

struct FiniteDifferenceResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Max over all coordinates of |analytic - central| / (|analytic| + |central| + 1e-8),
/// with the fourth-order central stencil at step `epsilon`. `fn` must return a
/// single-element Var. Non-finite evaluations raise NumericError.
FiniteDifferenceResult finite_difference_check(const ScalarFn& fn, const std::vector<Tensor>& point,
                                               double epsilon = 1e-4);
double finite_difference_check(const std::function<Var(const Var&)>& fn, const Tensor& point,
                               double epsilon = 1e-4);

struct GradCheckCase {
  std::string name;
  /// Draws a random evaluation point (one tensor per input).
  std::function<std::vector<Tensor>(std::mt19937_64&)> sample;
  ScalarFn fn;
};

/// Every differentiable op plus the composed losses (through compute_affinity
/// and roi_crop). Outputs are reduced to scalars with fixed random weights so
/// every input coordinate carries a generic nonzero gradient.
std::vector<GradCheckCase> gradcheck_registry();

/// A deliberately wrong backward (d/dx x^2 reported as 3x), for detector tests.
GradCheckCase faulty_gradcheck_case();

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t points = 0;
  bool passed = false;
};

std::vector<GradCheckReport> run_gradcheck(const std::vector<GradCheckCase>& cases, std::size_t points,
                                           std::uint64_t seed, double tolerance = 1e-4);

}  // namespace aftk
