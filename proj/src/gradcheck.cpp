// SPDX-License-Identifier: Apache-2.0
#include "aftk/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "aftk/affinity.hpp"
#include "aftk/errors.hpp"
#include "aftk/localization.hpp"
#include "aftk/objectives.hpp"
#include "aftk/ops.hpp"

namespace aftk {

namespace {

Tensor uniform_tensor(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = d(rng);
  return t;
}

// Magnitudes in [lo, hi] with random signs: keeps clear of kinks at zero.
Tensor signed_tensor(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::bernoulli_distribution sign(0.5);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = sign(rng) ? d(rng) : -d(rng);
  return t;
}

// Values in [lo, hi] whose fractional part stays in [0.05, 0.95], away from
// the bilinear interpolation kinks at integer coordinates.
Tensor off_lattice_tensor(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  Tensor t = uniform_tensor(rng, std::move(shape), lo, hi);
  for (double& v : t.values()) {
    const double f = v - std::floor(v);
    if (f < 0.05) v += 0.05;
    if (f > 0.95) v -= 0.05;
  }
  return t;
}

// Fixed pseudo-random weights per output shape, so a point's scalarization
// is identical across all evaluations.
Var weighted_sum(const Var& out) {
  std::mt19937_64 rng(0x51f15e + out.size());
  Tensor w = uniform_tensor(rng, out.shape(), -1.0, 1.0);
  return ops::sum(ops::mul(out, Var::constant(std::move(w))));
}

FeatureMap fmap(const Var& v, std::size_t h, std::size_t w) { return make_feature_map(v, Grid{h, w}); }

using Sampler = std::function<std::vector<Tensor>(std::mt19937_64&)>;

GradCheckCase make_case(std::string name, Sampler sample, ScalarFn fn) {
  return GradCheckCase{std::move(name), std::move(sample), std::move(fn)};
}

Sampler two(Shape a, Shape b, double lo = -1.0, double hi = 1.0) {
  return [=](std::mt19937_64& r) { return std::vector<Tensor>{uniform_tensor(r, a, lo, hi), uniform_tensor(r, b, lo, hi)}; };
}
Sampler one(Shape a, double lo = -1.0, double hi = 1.0) {
  return [=](std::mt19937_64& r) { return std::vector<Tensor>{uniform_tensor(r, a, lo, hi)}; };
}

}  // namespace

FiniteDifferenceResult finite_difference_check(const ScalarFn& fn, const std::vector<Tensor>& point, double epsilon) {
  if (!(epsilon > 0)) throw ParameterError("finite-difference step must be positive");
  std::vector<Var> params;
  for (const Tensor& p : point) params.push_back(Var::parameter(p));
  const Var out = fn(params);
  if (out.size() != 1) throw DimensionError("gradient check needs a scalar function, got " + shape_string(out.shape()));
  backward(out);

  std::vector<Var> consts;
  for (const Tensor& p : point) consts.push_back(Var::constant(p));
  auto eval = [&]() {
    const double v = fn(consts).item();
    if (!std::isfinite(v)) throw NumericError("non-finite function value during gradient check");
    return v;
  };

  FiniteDifferenceResult res;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const Tensor& g = params[i].grad();
    for (std::size_t k = 0; k < point[i].size(); ++k) {
      const double analytic = g.size() == point[i].size() ? g[k] : 0.0;
      Tensor& x = consts[i].mutable_value();
      const double saved = x[k];
      auto at = [&](double offset) {
        x[k] = saved + offset;
        return eval();
      };
      // Fourth-order central stencil: truncation O(h^4), round-off O(ulp/h).
      const double h = epsilon;
      const double d1 = at(h) - at(-h);
      const double d2 = at(2 * h) - at(-2 * h);
      const double numeric = (8.0 * d1 - d2) / (12.0 * h);
      x[k] = saved;
      const double rel = std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-8);
      if (rel > res.max_rel_error) res = {rel, i, k, analytic, numeric};
    }
  }
  return res;
}

double finite_difference_check(const std::function<Var(const Var&)>& fn, const Tensor& point, double epsilon) {
  return finite_difference_check([&](const std::vector<Var>& v) { return fn(v[0]); }, {point}, epsilon).max_rel_error;
}

std::vector<GradCheckCase> gradcheck_registry() {
  using namespace ops;
  std::vector<GradCheckCase> c;
  const Shape m34{3, 4};

  c.push_back(make_case("add", two(m34, m34), [](const auto& v) { return weighted_sum(add(v[0], v[1])); }));
  c.push_back(make_case("sub", two(m34, m34), [](const auto& v) { return weighted_sum(sub(v[0], v[1])); }));
  c.push_back(make_case("mul", two(m34, m34), [](const auto& v) { return weighted_sum(mul(v[0], v[1])); }));
  c.push_back(make_case("scale", one(m34), [](const auto& v) { return weighted_sum(scale(v[0], 1.7)); }));
  c.push_back(make_case("add_scalar", one(m34), [](const auto& v) { return weighted_sum(add_scalar(v[0], 0.3)); }));
  c.push_back(make_case(
      "abs", [=](auto& r) { return std::vector<Tensor>{signed_tensor(r, m34, 0.1, 1.0)}; },
      [](const auto& v) { return weighted_sum(abs(v[0])); }));
  c.push_back(make_case("exp", one(m34), [](const auto& v) { return weighted_sum(exp(v[0])); }));
  c.push_back(make_case("square", one(m34), [](const auto& v) { return weighted_sum(square(v[0])); }));
  c.push_back(make_case(
      "leaky_relu", [=](auto& r) { return std::vector<Tensor>{signed_tensor(r, m34, 0.05, 1.0)}; },
      [](const auto& v) { return weighted_sum(leaky_relu(v[0], 0.1)); }));
  c.push_back(make_case(
      "clamp",
      [=](auto& r) {
        Tensor t = signed_tensor(r, m34, 0.05, 2.0);
        for (double& x : t.values())
          if (std::abs(std::abs(x) - 1.0) < 0.05) x *= 1.2;
        return std::vector<Tensor>{t};
      },
      [](const auto& v) { return weighted_sum(clamp(v[0], -1.0, 1.0)); }));
  c.push_back(make_case(
      "clamp_tensor_bounds",
      [=](auto& r) {
        Tensor t = signed_tensor(r, m34, 0.05, 2.0);
        for (double& x : t.values())
          if (std::abs(std::abs(x) - 1.0) < 0.05) x *= 1.2;
        return std::vector<Tensor>{t};
      },
      [](const auto& v) {
        Tensor lo({3, 4}, -1.0), hi({3, 4}, 1.0);
        return weighted_sum(clamp(v[0], lo, hi));
      }));
  c.push_back(make_case("reshape", one(m34), [](const auto& v) { return weighted_sum(reshape(v[0], {2, 6})); }));
  c.push_back(make_case("transpose", one(m34), [](const auto& v) { return weighted_sum(transpose(v[0])); }));
  c.push_back(make_case("matmul", two(m34, {4, 2}), [](const auto& v) { return weighted_sum(matmul(v[0], v[1])); }));
  c.push_back(make_case("sum", one(m34), [](const auto& v) { return scale(sum(v[0]), 0.7); }));
  c.push_back(make_case("mean", one(m34), [](const auto& v) { return scale(mean(v[0]), 0.7); }));
  c.push_back(make_case("sum_rows", one(m34), [](const auto& v) { return weighted_sum(sum_rows(v[0])); }));
  c.push_back(make_case("sum_cols", one(m34), [](const auto& v) { return weighted_sum(sum_cols(v[0])); }));
  c.push_back(make_case("mean_cols", one(m34), [](const auto& v) { return weighted_sum(mean_cols(v[0])); }));
  c.push_back(make_case("norm_l2_cols", one(m34), [](const auto& v) { return weighted_sum(norm_l2_cols(v[0])); }));
  c.push_back(make_case(
      "norm_l1_cols", [=](auto& r) { return std::vector<Tensor>{signed_tensor(r, m34, 0.1, 1.0)}; },
      [](const auto& v) { return weighted_sum(norm_l1_cols(v[0])); }));
  c.push_back(make_case("mse", two(m34, m34), [](const auto& v) { return mse(v[0], v[1]); }));
  c.push_back(make_case("broadcast_cols", one({3, 1}), [](const auto& v) { return weighted_sum(broadcast_cols(v[0], 4)); }));
  c.push_back(make_case("broadcast_rows", one({1, 4}), [](const auto& v) { return weighted_sum(broadcast_rows(v[0], 3)); }));
  c.push_back(make_case("softmax_columns", one(m34, -2.0, 2.0),
                        [](const auto& v) { return weighted_sum(softmax_columns(v[0], 0.7)); }));
  c.push_back(make_case("normalize_columns", one(m34, 0.2, 1.0),
                        [](const auto& v) { return weighted_sum(normalize_columns(v[0])); }));
  c.push_back(make_case("l2_normalize_columns", one(m34, -1.0, 1.0),
                        [](const auto& v) { return weighted_sum(l2_normalize_columns(v[0], 2.5)); }));
  c.push_back(make_case("select_columns", one(m34), [](const auto& v) {
    const std::vector<std::size_t> idx{2, 0, 2};
    return weighted_sum(select_columns(v[0], idx));
  }));
  c.push_back(make_case("select_rows", one(m34), [](const auto& v) {
    const std::vector<std::size_t> idx{1, 1, 2};
    return weighted_sum(select_rows(v[0], idx));
  }));
  c.push_back(make_case("slice_rows", one(m34), [](const auto& v) { return weighted_sum(slice_rows(v[0], 1, 3)); }));
  c.push_back(make_case("concat_rows", two(m34, {2, 4}),
                        [](const auto& v) { return weighted_sum(concat_rows({v[0], v[1], v[0]})); }));
  c.push_back(make_case("concat_cols", two(m34, {3, 2}),
                        [](const auto& v) { return weighted_sum(concat_cols({v[0], v[1]})); }));
  c.push_back(make_case(
      "conv2d_stride2",
      [](auto& r) {
        return std::vector<Tensor>{uniform_tensor(r, {2, 6, 6}, -1, 1), uniform_tensor(r, {3, 2, 3, 3}, -1, 1),
                                   uniform_tensor(r, {3}, -1, 1)};
      },
      [](const auto& v) { return weighted_sum(conv2d(v[0], v[1], v[2], 2, 1)); }));
  c.push_back(make_case(
      "conv2d_stride1",
      [](auto& r) {
        return std::vector<Tensor>{uniform_tensor(r, {2, 5, 5}, -1, 1), uniform_tensor(r, {2, 2, 3, 3}, -1, 1),
                                   uniform_tensor(r, {2}, -1, 1)};
      },
      [](const auto& v) { return weighted_sum(conv2d(v[0], v[1], v[2], 1, 1)); }));
  c.push_back(make_case("upsample_nearest", one({2, 3, 3}),
                        [](const auto& v) { return weighted_sum(upsample_nearest(v[0], 2)); }));
  c.push_back(make_case(
      "bilinear_sample",
      [](auto& r) {
        return std::vector<Tensor>{uniform_tensor(r, {2, 5, 5}, -1, 1), off_lattice_tensor(r, {2, 6}, 0.2, 3.8)};
      },
      [](const auto& v) { return weighted_sum(bilinear_sample(v[0], v[1])); }));

  // Composed chains on 3x3 feature grids (N = 9, C = 3).
  const Sampler pair_features = two({3, 9}, {3, 9});
  c.push_back(make_case("compute_affinity", pair_features, [](const auto& v) {
    return weighted_sum(compute_affinity(fmap(v[0], 3, 3), fmap(v[1], 3, 3), 0.8).values);
  }));
  c.push_back(make_case(
      "transport",
      [](auto& r) {
        return std::vector<Tensor>{uniform_tensor(r, {2, 9}, -1, 1), uniform_tensor(r, {3, 9}, -1, 1),
                                   uniform_tensor(r, {3, 9}, -1, 1)};
      },
      [](const auto& v) {
        return weighted_sum(transport(v[0], compute_affinity(fmap(v[1], 3, 3), fmap(v[2], 3, 3))));
      }));
  c.push_back(make_case("trace_locations", pair_features, [](const auto& v) {
    const auto a = compute_affinity(fmap(v[0], 3, 3), fmap(v[1], 3, 3));
    return weighted_sum(trace_locations(canonical_grid(a.source), a).coords);
  }));
  // Top-k selection is piecewise: draws keep the k-th and (k+1)-th entries of
  // every column apart so the stencil never straddles a switch. Rows that
  // survive in no column only enter through softmax denominators, which
  // renormalization cancels; such draws are rejected too, since their
  // exact-zero gradient would be compared against pure round-off.
  c.push_back(make_case(
      "topk_sparsify",
      [](auto& r) {
        for (;;) {
          std::vector<Tensor> v{uniform_tensor(r, {3, 9}, -1, 1), uniform_tensor(r, {3, 9}, -1, 1)};
          const Tensor logits = matmul(v[0].transposed(), v[1]);
          bool ok = true;
          for (std::size_t j = 0; j < 9 && ok; ++j) {
            std::vector<double> col(9);
            for (std::size_t i = 0; i < 9; ++i) col[i] = logits.at(i, j);
            std::sort(col.begin(), col.end(), std::greater<>());
            ok = col[4] - col[5] > 0.02;
          }
          if (!ok) continue;
          const auto a = topk_sparsify(
              compute_affinity(fmap(Var::constant(v[0]), 3, 3), fmap(Var::constant(v[1]), 3, 3)), 5);
          const Tensor s = ops::sum_cols(Var::constant(a.values.value())).value();
          for (double x : s.values()) ok = ok && x > 0.0;
          if (ok) return v;
        }
      },
      [](const auto& v) {
        return weighted_sum(topk_sparsify(compute_affinity(fmap(v[0], 3, 3), fmap(v[1], 3, 3)), 5).values);
      }));
  c.push_back(make_case("gram_energy", one({3, 9}), [](const auto& v) { return weighted_sum(gram_energy(fmap(v[0], 3, 3))); }));
  c.push_back(make_case("locate_center", pair_features, [](const auto& v) {
    const auto a = compute_affinity(fmap(v[0], 3, 3), fmap(v[1], 3, 3));
    return weighted_sum(locate_center(trace_locations(canonical_grid(a.source), a)));
  }));
  // |l - center| has a kink at zero: draws keep every traced coordinate at
  // least 0.02 cells from the center.
  auto away_from_center = [](const LocationMap& traced, const Tensor& center) {
    const Tensor& l = traced.coords.value();
    for (std::size_t j = 0; j < l.cols(); ++j)
      for (std::size_t ax = 0; ax < 2; ++ax)
        if (std::abs(l.at(ax, j) - center[ax]) <= 0.02) return false;
    return true;
  };
  c.push_back(make_case(
      "estimate_scale",
      [away_from_center](auto& r) {
        for (;;) {
          std::vector<Tensor> v{uniform_tensor(r, {3, 9}, -1, 1), uniform_tensor(r, {3, 9}, -1, 1)};
          const auto a = compute_affinity(fmap(Var::constant(v[0]), 3, 3), fmap(Var::constant(v[1]), 3, 3));
          const auto traced = trace_locations(canonical_grid(a.source), a);
          if (away_from_center(traced, locate_center(traced).value())) return v;
        }
      },
      [](const auto& v) {
    const auto a = compute_affinity(fmap(v[0], 3, 3), fmap(v[1], 3, 3));
    const auto traced = trace_locations(canonical_grid(a.source), a);
    return weighted_sum(estimate_scale(traced, locate_center(traced)));
  }));
  c.push_back(make_case(
      "roi_crop",
      [](auto& r) {
        return std::vector<Tensor>{uniform_tensor(r, {2, 6, 6}, -1, 1), off_lattice_tensor(r, {2, 1}, 2.0, 3.0),
                                   uniform_tensor(r, {2, 1}, 1.2, 2.2)};
      },
      [](const auto& v) {
        const FeatureMap f = feature_map_from_chw(v[0]);
        return weighted_sum(roi_crop(f, BBox{v[1], v[2]}, 3, 3).values);
      }));
  c.push_back(make_case(
      "localize_patch",
      [away_from_center](auto& r) {
        for (;;) {
          std::vector<Tensor> v{uniform_tensor(r, {3, 9}, -1, 1), uniform_tensor(r, {3, 36}, -1, 1)};
          const Localization loc =
              localize_patch(fmap(Var::constant(v[0]), 3, 3), fmap(Var::constant(v[1]), 6, 6));
          if (away_from_center(loc.traced, loc.box.center.value())) return v;
        }
      },
      [](const auto& v) {
        const Localization loc = localize_patch(fmap(v[0], 3, 3), fmap(v[1], 6, 6));
        return add(weighted_sum(loc.box.center), weighted_sum(loc.raw_half));
      }));
  // The truncation window is a discontinuity: draws keep every traced point
  // at least 0.02 cells from the window edges.
  c.push_back(make_case(
      "concentration_truncated",
      [](auto& r) {
        for (;;) {
          std::vector<Tensor> v{uniform_tensor(r, {3, 9}, -2, 2), uniform_tensor(r, {3, 9}, -2, 2),
                                uniform_tensor(r, {2, 1}, 0.8, 1.2), uniform_tensor(r, {2, 1}, 0.2, 0.6)};
          const auto a = compute_affinity(fmap(Var::constant(v[0]), 3, 3), fmap(Var::constant(v[1]), 3, 3));
          const Tensor l = trace_locations(canonical_grid(a.source), a).coords.value();
          bool ok = true;
          for (std::size_t j = 0; j < l.cols(); ++j)
            for (std::size_t ax = 0; ax < 2; ++ax)
              ok = ok && std::abs(std::abs(l.at(ax, j) - v[2][ax]) - v[3][ax]) > 0.02;
          if (ok) return v;
        }
      },
      [](const auto& v) {
        const auto a = compute_affinity(fmap(v[0], 3, 3), fmap(v[1], 3, 3));
        return concentration_truncated(trace_locations(canonical_grid(a.source), a), v[2], v[3]);
      }));
  c.push_back(make_case(
      "concentration_local",
      [](auto& r) { return std::vector<Tensor>{uniform_tensor(r, {3, 16}, -1, 1), uniform_tensor(r, {3, 16}, -1, 1)}; },
      [](const auto& v) {
        const auto a = compute_affinity(fmap(v[0], 4, 4), fmap(v[1], 4, 4));
        return concentration_local(trace_locations(canonical_grid(a.source), a), 2);
      }));
  c.push_back(make_case("orthogonal_cycle_location", pair_features, [](const auto& v) {
    const auto a = compute_affinity(fmap(v[0], 3, 3), fmap(v[1], 3, 3));
    return orthogonal_cycle_location(canonical_grid(a.source), a);
  }));
  c.push_back(make_case("orthogonal_cycle_feature", pair_features, [](const auto& v) {
    return orthogonal_cycle_feature(v[0], compute_affinity(fmap(v[0], 3, 3), fmap(v[1], 3, 3)));
  }));
  c.push_back(make_case(
      "reconstruction_loss",
      [](auto& r) {
        return std::vector<Tensor>{uniform_tensor(r, {2, 9}, -1, 1), uniform_tensor(r, {2, 9}, -1, 1),
                                   uniform_tensor(r, {3, 9}, -1, 1), uniform_tensor(r, {3, 9}, -1, 1)};
      },
      [](const auto& v) {
        return reconstruction_loss(v[0], v[1], compute_affinity(fmap(v[2], 3, 3), fmap(v[3], 3, 3)));
      }));
  // The joint-stage objective end to end: localize the patch, crop features
  // and color latents from the target, then match patch to crop.
  c.push_back(make_case(
      "joint_total_loss",
      [](auto& r) {
        return std::vector<Tensor>{uniform_tensor(r, {3, 9}, -1, 1), uniform_tensor(r, {3, 6, 6}, -1, 1),
                                   uniform_tensor(r, {2, 9}, -1, 1), uniform_tensor(r, {2, 6, 6}, -1, 1)};
      },
      [](const auto& v) {
        const FeatureMap p1 = fmap(v[0], 3, 3);
        const FeatureMap f2 = feature_map_from_chw(v[1]);
        const Localization loc = localize_patch(p1, f2);
        const FeatureMap p2 = roi_crop(f2, loc.box, 3, 3);
        const FeatureMap c2 = roi_crop(feature_map_from_chw(v[3]), loc.box, 3, 3);
        const AffinityMatrix app = compute_affinity(p1, p2);
        LossTerms t;
        t.reconstruction = reconstruction_loss(v[2], c2.values, app);
        t.concentration_region = concentration_truncated(loc.traced, loc.box.center, loc.box.half);
        t.concentration_local = concentration_local(trace_locations(canonical_grid(p2.grid), compute_affinity(p2, p1)), 3);
        t.orthogonal_location = orthogonal_cycle_location(canonical_grid(p1.grid), app);
        t.orthogonal_feature = orthogonal_cycle_feature(v[2], app);
        return total_loss(Stage::joint, t).total;
      }));
  return c;
}

GradCheckCase faulty_gradcheck_case() {
  return make_case("faulty_square", one({3, 4}), [](const auto& v) {
    const Var& x = v[0];
    Tensor out = x.value();
    for (double& e : out.values()) e = e * e;
    Var y = Var::record("faulty_square", std::move(out), {x}, [x](Node& self) {
      Tensor g = self.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 3.0 * x.value()[i];
      accumulate_grad(*x.node(), g);
    });
    return weighted_sum(y);
  });
}

std::vector<GradCheckReport> run_gradcheck(const std::vector<GradCheckCase>& cases, std::size_t points,
                                           std::uint64_t seed, double tolerance) {
  std::vector<GradCheckReport> out;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const GradCheckCase& gc = cases[ci];
    std::mt19937_64 rng(seed * 1000003ULL + ci);
    GradCheckReport rep{gc.name, 0.0, points, true};
    try {
      for (std::size_t p = 0; p < points; ++p) {
        const auto res = finite_difference_check(gc.fn, gc.sample(rng));
        rep.max_rel_error = std::max(rep.max_rel_error, res.max_rel_error);
      }
    } catch (const NumericError& e) {
      throw NumericError("gradcheck " + gc.name + ": " + e.what());
    } catch (const Error& e) {
      throw Error("gradcheck " + gc.name + ": " + e.what());
    }
    rep.passed = rep.max_rel_error < tolerance;
    out.push_back(rep);
  }
  return out;
}

}  // namespace aftk
