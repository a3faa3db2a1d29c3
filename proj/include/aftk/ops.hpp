// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations on Var. Rank-2 tensors are (rows x cols);
// images are (channels x height x width) with x fastest.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "aftk/autodiff.hpp"

namespace aftk::ops {

// Elementwise, operands of identical shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var abs(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);
Var leaky_relu(const Var& a, double negative_slope);
Var clamp(const Var& a, double lo, double hi);
/// Elementwise clamp with per-element bounds shaped like `a`.
Var clamp(const Var& a, const Tensor& lo, const Tensor& hi);

Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a);
Var matmul(const Var& a, const Var& b);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
/// M x N -> 1 x N.
Var sum_rows(const Var& a);
/// M x N -> M x 1.
Var sum_cols(const Var& a);
Var mean_cols(const Var& a);
/// Euclidean norm of every column, M x N -> 1 x N. Subgradient 0 at the origin.
Var norm_l2_cols(const Var& a);
/// L1 norm of every column, M x N -> 1 x N.
Var norm_l1_cols(const Var& a);
Var mse(const Var& a, const Var& b);

// Broadcasting.
/// M x 1 -> M x n.
Var broadcast_cols(const Var& column, std::size_t n);
/// 1 x N -> m x N.
Var broadcast_rows(const Var& row, std::size_t m);

/// Column-wise softmax of x / temperature, stabilized by the column max.
Var softmax_columns(const Var& x, double temperature = 1.0);
/// Divides every column by its sum. Column sums must be positive.
Var normalize_columns(const Var& x);
/// scale * x_j / sqrt(|x_j|^2 + eps^2) for every column; zero columns stay zero.
Var l2_normalize_columns(const Var& x, double scale = 1.0, double eps = 1e-6);

// Indexing.
Var select_columns(const Var& a, std::span<const std::size_t> index);
Var select_rows(const Var& a, std::span<const std::size_t> index);
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);

// Images.
/// x: Cin x H x W, weight: Cout x Cin x k x k, bias: Cout. Zero padding.
Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride, std::size_t pad);
Var upsample_nearest(const Var& x, std::size_t factor);
/// Samples f (C x H x W) at points (2 x P, rows x then y, in cell units where
/// integer coordinates are cell centers). Coordinates are clamped to the
/// frame; the clamped direction receives no gradient. Returns C x P.
Var bilinear_sample(const Var& f, const Var& points);

}  // namespace aftk::ops
