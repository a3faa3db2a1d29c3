// SPDX-License-Identifier: Apache-2.0
#include "aftk/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "aftk/errors.hpp"

namespace aftk::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MutMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MutMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(a.shape()));
}

const Tensor& in_value(Node& self, std::size_t i) { return self.inputs[i]->value; }
Node& in_node(Node& self, std::size_t i) { return *self.inputs[i]; }

template <class F>
Var unary(const char* op, const Var& a, F&& forward_and_slope) {
  // forward_and_slope(x) -> {y, dy/dx}
  Tensor out(a.shape());
  auto slope = std::make_shared<std::vector<double>>(a.size());
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto [y, d] = forward_and_slope(x[i]);
    out[i] = y;
    (*slope)[i] = d;
  }
  return Var::record(op, std::move(out), {a}, [slope](Node& self) {
    std::vector<double> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * (*slope)[i];
    accumulate_grad(in_node(self, 0), g);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return Var::record("add", std::move(out), {a, b}, [](Node& self) {
    accumulate_grad(in_node(self, 0), self.grad);
    accumulate_grad(in_node(self, 1), self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return Var::record("sub", std::move(out), {a, b}, [](Node& self) {
    accumulate_grad(in_node(self, 0), self.grad);
    Tensor neg(self.grad.shape());
    for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -self.grad[i];
    accumulate_grad(in_node(self, 1), neg);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return Var::record("mul", std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = in_value(self, 0);
    const Tensor& bv = in_value(self, 1);
    Tensor ga(self.grad.shape()), gb(self.grad.shape());
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] = self.grad[i] * bv[i];
      gb[i] = self.grad[i] * av[i];
    }
    accumulate_grad(in_node(self, 0), ga);
    accumulate_grad(in_node(self, 1), gb);
  });
}

Var scale(const Var& a, double s) {
  return unary("scale", a, [s](double x) { return std::pair{s * x, s}; });
}

Var add_scalar(const Var& a, double s) {
  return unary("add_scalar", a, [s](double x) { return std::pair{x + s, 1.0}; });
}

Var abs(const Var& a) {
  return unary("abs", a, [](double x) { return std::pair{std::abs(x), x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0)}; });
}

Var exp(const Var& a) {
  return unary("exp", a, [](double x) {
    const double e = std::exp(x);
    return std::pair{e, e};
  });
}

Var square(const Var& a) {
  return unary("square", a, [](double x) { return std::pair{x * x, 2.0 * x}; });
}

Var leaky_relu(const Var& a, double negative_slope) {
  return unary("leaky_relu", a, [negative_slope](double x) {
    return x > 0 ? std::pair{x, 1.0} : std::pair{negative_slope * x, negative_slope};
  });
}

Var clamp(const Var& a, double lo, double hi) {
  if (!(lo <= hi)) throw ParameterError("clamp: lo > hi");
  return unary("clamp", a, [lo, hi](double x) {
    if (x < lo) return std::pair{lo, 0.0};
    if (x > hi) return std::pair{hi, 0.0};
    return std::pair{x, (x > lo && x < hi) ? 1.0 : 0.0};
  });
}

Var clamp(const Var& a, const Tensor& lo, const Tensor& hi) {
  if (lo.shape() != a.shape() || hi.shape() != a.shape()) throw DimensionError("clamp: bound shape mismatch");
  Tensor out(a.shape());
  auto slope = std::make_shared<std::vector<double>>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(lo[i] <= hi[i])) throw ParameterError("clamp: lo > hi");
    const double x = a.value()[i];
    out[i] = std::clamp(x, lo[i], hi[i]);
    (*slope)[i] = (x > lo[i] && x < hi[i]) ? 1.0 : 0.0;
  }
  return Var::record("clamp", std::move(out), {a}, [slope](Node& self) {
    std::vector<double> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * (*slope)[i];
    accumulate_grad(in_node(self, 0), g);
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return Var::record("reshape", std::move(out), {a},
                     [](Node& self) { accumulate_grad(in_node(self, 0), self.grad.values()); });
}

Var transpose(const Var& a) {
  require_rank(a, 2, "transpose");
  return Var::record("transpose", a.value().transposed(), {a},
                     [](Node& self) { accumulate_grad(in_node(self, 0), self.grad.transposed()); });
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  Tensor out = aftk::matmul(a.value(), b.value());
  return Var::record("matmul", std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = in_value(self, 0);
    const Tensor& bv = in_value(self, 1);
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    auto g = as_matrix(self.grad, m, n);
    if (in_node(self, 0).requires_grad) {
      Tensor ga({m, k});
      as_matrix(ga, m, k).noalias() = g * as_matrix(bv, k, n).transpose();
      accumulate_grad(in_node(self, 0), ga);
    }
    if (in_node(self, 1).requires_grad) {
      Tensor gb({k, n});
      as_matrix(gb, k, n).noalias() = as_matrix(av, m, k).transpose() * g;
      accumulate_grad(in_node(self, 1), gb);
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return Var::record("sum", Tensor::scalar(s), {a}, [](Node& self) {
    std::vector<double> g(in_value(self, 0).size(), self.grad[0]);
    accumulate_grad(in_node(self, 0), g);
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var sum_rows(const Var& a) {
  require_rank(a, 2, "sum_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a.value().at(i, j);
  return Var::record("sum_rows", std::move(out), {a}, [m, n](Node& self) {
    Tensor g({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g.at(i, j) = self.grad[j];
    accumulate_grad(in_node(self, 0), g);
  });
}

Var sum_cols(const Var& a) {
  require_rank(a, 2, "sum_cols");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({m, 1});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += a.value().at(i, j);
  return Var::record("sum_cols", std::move(out), {a}, [m, n](Node& self) {
    Tensor g({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g.at(i, j) = self.grad[i];
    accumulate_grad(in_node(self, 0), g);
  });
}

Var mean_cols(const Var& a) {
  require_rank(a, 2, "mean_cols");
  return scale(sum_cols(a), 1.0 / static_cast<double>(a.dim(1)));
}

Var norm_l2_cols(const Var& a) {
  require_rank(a, 2, "norm_l2_cols");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({1, n});
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += a.value().at(i, j) * a.value().at(i, j);
    out[j] = std::sqrt(s);
  }
  return Var::record("norm_l2_cols", std::move(out), {a}, [m, n](Node& self) {
    const Tensor& av = in_value(self, 0);
    Tensor g({m, n});
    for (std::size_t j = 0; j < n; ++j) {
      const double norm = self.value[j];
      if (norm == 0.0) continue;
      for (std::size_t i = 0; i < m; ++i) g.at(i, j) = self.grad[j] * av.at(i, j) / norm;
    }
    accumulate_grad(in_node(self, 0), g);
  });
}

Var norm_l1_cols(const Var& a) { return sum_rows(abs(a)); }

Var mse(const Var& a, const Var& b) {
  require_same_shape(a, b, "mse");
  return mean(square(sub(a, b)));
}

Var broadcast_cols(const Var& column, std::size_t n) {
  require_rank(column, 2, "broadcast_cols");
  if (column.dim(1) != 1) throw DimensionError("broadcast_cols: expected M x 1, got " + shape_string(column.shape()));
  const std::size_t m = column.dim(0);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = column.value()[i];
  return Var::record("broadcast_cols", std::move(out), {column}, [m, n](Node& self) {
    Tensor g({m, 1});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i] += self.grad.at(i, j);
    accumulate_grad(in_node(self, 0), g);
  });
}

Var broadcast_rows(const Var& row, std::size_t m) {
  require_rank(row, 2, "broadcast_rows");
  if (row.dim(0) != 1) throw DimensionError("broadcast_rows: expected 1 x N, got " + shape_string(row.shape()));
  const std::size_t n = row.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = row.value()[j];
  return Var::record("broadcast_rows", std::move(out), {row}, [m, n](Node& self) {
    Tensor g({1, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[j] += self.grad.at(i, j);
    accumulate_grad(in_node(self, 0), g);
  });
}

Var softmax_columns(const Var& x, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("softmax_columns: temperature must be positive");
  require_rank(x, 2, "softmax_columns");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const Tensor& xv = x.value();
  Tensor out({m, n});
  for (std::size_t j = 0; j < n; ++j) {
    double mx = xv.at(0, j);
    for (std::size_t i = 1; i < m; ++i) mx = std::max(mx, xv.at(i, j));
    double z = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double e = std::exp((xv.at(i, j) - mx) / temperature);
      out.at(i, j) = e;
      z += e;
    }
    for (std::size_t i = 0; i < m; ++i) out.at(i, j) /= z;
  }
  return Var::record("softmax_columns", std::move(out), {x}, [m, n, temperature](Node& self) {
    const Tensor& y = self.value;
    Tensor g({m, n});
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t i = 0; i < m; ++i) dot += self.grad.at(i, j) * y.at(i, j);
      for (std::size_t i = 0; i < m; ++i) g.at(i, j) = y.at(i, j) * (self.grad.at(i, j) - dot) / temperature;
    }
    accumulate_grad(in_node(self, 0), g);
  });
}

Var normalize_columns(const Var& x) {
  require_rank(x, 2, "normalize_columns");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const Tensor& xv = x.value();
  auto sums = std::make_shared<std::vector<double>>(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) (*sums)[j] += xv.at(i, j);
  Tensor out({m, n});
  for (std::size_t j = 0; j < n; ++j) {
    if (!((*sums)[j] > 0.0)) throw NumericError("normalize_columns: non-positive column sum");
    for (std::size_t i = 0; i < m; ++i) out.at(i, j) = xv.at(i, j) / (*sums)[j];
  }
  return Var::record("normalize_columns", std::move(out), {x}, [m, n, sums](Node& self) {
    const Tensor& y = self.value;
    Tensor g({m, n});
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t i = 0; i < m; ++i) dot += self.grad.at(i, j) * y.at(i, j);
      for (std::size_t i = 0; i < m; ++i) g.at(i, j) = (self.grad.at(i, j) - dot) / (*sums)[j];
    }
    accumulate_grad(in_node(self, 0), g);
  });
}

Var l2_normalize_columns(const Var& x, double scale, double eps) {
  require_rank(x, 2, "l2_normalize_columns");
  if (!(eps > 0.0)) throw ParameterError("l2_normalize_columns: eps must be positive");
  if (!(scale > 0.0)) throw ParameterError("l2_normalize_columns: scale must be positive");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const Tensor& xv = x.value();
  auto norms = std::make_shared<std::vector<double>>(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) (*norms)[j] += xv.at(i, j) * xv.at(i, j);
  for (double& v : *norms) v = std::sqrt(v + eps * eps);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = scale * xv.at(i, j) / (*norms)[j];
  return Var::record("l2_normalize_columns", std::move(out), {x}, [m, n, scale, norms](Node& self) {
    // dy/dx = (scale / r) (I - u u^T), u = x / r.
    const Tensor& y = self.value;
    Tensor g({m, n});
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t i = 0; i < m; ++i) dot += self.grad.at(i, j) * y.at(i, j);
      const double r = (*norms)[j];
      for (std::size_t i = 0; i < m; ++i)
        g.at(i, j) = (scale * self.grad.at(i, j) - y.at(i, j) * dot / scale) / r;
    }
    accumulate_grad(in_node(self, 0), g);
  });
}

Var select_columns(const Var& a, std::span<const std::size_t> index) {
  require_rank(a, 2, "select_columns");
  const std::size_t m = a.dim(0), n = a.dim(1), q = index.size();
  if (q == 0) throw DimensionError("select_columns: empty index");
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  Tensor out({m, q});
  for (std::size_t c = 0; c < q; ++c) {
    if ((*idx)[c] >= n) throw DimensionError("select_columns: index out of range");
    for (std::size_t i = 0; i < m; ++i) out.at(i, c) = a.value().at(i, (*idx)[c]);
  }
  return Var::record("select_columns", std::move(out), {a}, [m, n, idx](Node& self) {
    Tensor g({m, n});
    for (std::size_t c = 0; c < idx->size(); ++c)
      for (std::size_t i = 0; i < m; ++i) g.at(i, (*idx)[c]) += self.grad.at(i, c);
    accumulate_grad(in_node(self, 0), g);
  });
}

Var select_rows(const Var& a, std::span<const std::size_t> index) {
  return transpose(select_columns(transpose(a), index));
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_rows");
  if (begin >= end || end > a.dim(0)) throw DimensionError("slice_rows: bad range");
  const std::size_t n = a.dim(1);
  Tensor out({end - begin, n});
  std::copy(a.value().data() + begin * n, a.value().data() + end * n, out.data());
  const Shape in_shape = a.shape();
  return Var::record("slice_rows", std::move(out), {a}, [in_shape, begin, n](Node& self) {
    Tensor g(in_shape);
    std::copy(self.grad.data(), self.grad.data() + self.grad.size(), g.data() + begin * n);
    accumulate_grad(in_node(self, 0), g);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  require_rank(parts.front(), 2, "concat_rows");
  const std::size_t n = parts.front().dim(1);
  std::size_t m = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != n) throw DimensionError("concat_rows: column counts differ");
    m += p.dim(0);
  }
  Tensor out({m, n});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.size(), out.data() + off);
    off += p.size();
  }
  return Var::record("concat_rows", std::move(out), parts, [](Node& self) {
    std::size_t off = 0;
    for (auto& in : self.inputs) {
      const std::size_t len = in->value.size();
      accumulate_grad(*in, std::span<const double>(self.grad.data() + off, len));
      off += len;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  std::vector<Var> transposed;
  transposed.reserve(parts.size());
  for (const auto& p : parts) transposed.push_back(transpose(p));
  return transpose(concat_rows(transposed));
}

namespace {

struct ConvGeometry {
  std::size_t cin, h, w, k, stride, pad, hout, wout;
};

// cols: (cin*k*k) x (hout*wout)
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t p = g.hout * g.wout;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((c * g.k + ky) * g.k + kx) * p;
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            row[oy * g.wout + ox] = inside ? x[(c * g.h + iy) * g.w + ix] : 0.0;
          }
        }
      }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
  const std::size_t p = g.hout * g.wout;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((c * g.k + ky) * g.k + kx) * p;
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            dx[(c * g.h + iy) * g.w + ix] += row[oy * g.wout + ox];
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride, std::size_t pad) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (stride == 0) throw ParameterError("conv2d: stride must be positive");
  if (weight.dim(1) != x.dim(0) || weight.dim(3) != k || bias.dim(0) != cout)
    throw DimensionError("conv2d: weight " + shape_string(weight.shape()) + " incompatible with input " +
                         shape_string(x.shape()));
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), k, stride, pad, 0, 0};
  if (g.h + 2 * pad < k || g.w + 2 * pad < k) throw DimensionError("conv2d: input smaller than kernel");
  g.hout = (g.h + 2 * pad - k) / stride + 1;
  g.wout = (g.w + 2 * pad - k) / stride + 1;
  const std::size_t kk = g.cin * k * k, p = g.hout * g.wout;

  auto cols = std::make_shared<Tensor>(Shape{kk, p});
  im2col(x.value().data(), g, cols->data());
  Tensor out({cout, g.hout, g.wout});
  auto om = as_matrix(out, cout, p);
  om.noalias() = as_matrix(weight.value(), cout, kk) * as_matrix(*cols, kk, p);
  for (std::size_t o = 0; o < cout; ++o) om.row(static_cast<Eigen::Index>(o)).array() += bias.value()[o];

  return Var::record("conv2d", std::move(out), {x, weight, bias}, [g, cols, cout, kk, p](Node& self) {
    auto gm = as_matrix(self.grad, cout, p);
    Node& xn = in_node(self, 0);
    Node& wn = in_node(self, 1);
    Node& bn = in_node(self, 2);
    if (wn.requires_grad) {
      Tensor gw(wn.value.shape());
      as_matrix(gw, cout, kk).noalias() = gm * as_matrix(*cols, kk, p).transpose();
      accumulate_grad(wn, gw);
    }
    if (bn.requires_grad) {
      Tensor gb(bn.value.shape());
      for (std::size_t o = 0; o < cout; ++o) gb[o] = gm.row(static_cast<Eigen::Index>(o)).sum();
      accumulate_grad(bn, gb);
    }
    if (xn.requires_grad) {
      Tensor gcols({kk, p});
      as_matrix(gcols, kk, p).noalias() = as_matrix(wn.value, cout, kk).transpose() * gm;
      Tensor gx(xn.value.shape());
      col2im_add(gcols.data(), g, gx.data());
      accumulate_grad(xn, gx);
    }
  });
}

Var upsample_nearest(const Var& x, std::size_t factor) {
  require_rank(x, 3, "upsample_nearest");
  if (factor == 0) throw ParameterError("upsample_nearest: factor must be positive");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t ho = h * factor, wo = w * factor;
  Tensor out({c, ho, wo});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx)
        out[(ch * ho + y) * wo + xx] = x.value()[(ch * h + y / factor) * w + xx / factor];
  return Var::record("upsample_nearest", std::move(out), {x}, [c, h, w, ho, wo, factor](Node& self) {
    Tensor g({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx)
          g[(ch * h + y / factor) * w + xx / factor] += self.grad[(ch * ho + y) * wo + xx];
    accumulate_grad(in_node(self, 0), g);
  });
}

namespace {

struct BilinearTap {
  std::size_t x0, x1, y0, y1;
  double ax, ay;
  bool x_free, y_free;  // coordinate strictly inside the frame (not clamped)
};

BilinearTap make_tap(double px, double py, std::size_t h, std::size_t w) {
  const double maxx = static_cast<double>(w - 1), maxy = static_cast<double>(h - 1);
  BilinearTap t{};
  t.x_free = px > 0.0 && px < maxx;
  t.y_free = py > 0.0 && py < maxy;
  const double x = std::clamp(px, 0.0, maxx), y = std::clamp(py, 0.0, maxy);
  t.x0 = static_cast<std::size_t>(std::floor(x));
  t.y0 = static_cast<std::size_t>(std::floor(y));
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.ax = x - static_cast<double>(t.x0);
  t.ay = y - static_cast<double>(t.y0);
  return t;
}

}  // namespace

Var bilinear_sample(const Var& f, const Var& points) {
  require_rank(f, 3, "bilinear_sample");
  require_rank(points, 2, "bilinear_sample");
  if (points.dim(0) != 2) throw DimensionError("bilinear_sample: points must be 2 x P");
  const std::size_t c = f.dim(0), h = f.dim(1), w = f.dim(2), np = points.dim(1);
  const Tensor& fv = f.value();
  const Tensor& pv = points.value();
  auto taps = std::make_shared<std::vector<BilinearTap>>(np);
  Tensor out({c, np});
  for (std::size_t q = 0; q < np; ++q) {
    const BilinearTap t = make_tap(pv.at(0, q), pv.at(1, q), h, w);
    (*taps)[q] = t;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* plane = fv.data() + ch * h * w;
      out.at(ch, q) = (1 - t.ax) * (1 - t.ay) * plane[t.y0 * w + t.x0] + t.ax * (1 - t.ay) * plane[t.y0 * w + t.x1] +
                      (1 - t.ax) * t.ay * plane[t.y1 * w + t.x0] + t.ax * t.ay * plane[t.y1 * w + t.x1];
    }
  }
  return Var::record("bilinear_sample", std::move(out), {f, points}, [c, h, w, np, taps](Node& self) {
    Node& fn = in_node(self, 0);
    Node& pn = in_node(self, 1);
    Tensor gf, gp;
    if (fn.requires_grad) gf = Tensor({c, h, w});
    if (pn.requires_grad) gp = Tensor({2, np});
    const Tensor& fv = fn.value;
    for (std::size_t q = 0; q < np; ++q) {
      const BilinearTap& t = (*taps)[q];
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double g = self.grad.at(ch, q);
        if (g == 0.0) continue;
        if (fn.requires_grad) {
          double* plane = gf.data() + ch * h * w;
          plane[t.y0 * w + t.x0] += g * (1 - t.ax) * (1 - t.ay);
          plane[t.y0 * w + t.x1] += g * t.ax * (1 - t.ay);
          plane[t.y1 * w + t.x0] += g * (1 - t.ax) * t.ay;
          plane[t.y1 * w + t.x1] += g * t.ax * t.ay;
        }
        if (pn.requires_grad) {
          const double* plane = fv.data() + ch * h * w;
          const double f00 = plane[t.y0 * w + t.x0], f01 = plane[t.y0 * w + t.x1];
          const double f10 = plane[t.y1 * w + t.x0], f11 = plane[t.y1 * w + t.x1];
          if (t.x_free) gp.at(0, q) += g * ((1 - t.ay) * (f01 - f00) + t.ay * (f11 - f10));
          if (t.y_free) gp.at(1, q) += g * ((1 - t.ax) * (f10 - f00) + t.ax * (f11 - f01));
        }
      }
    }
    if (fn.requires_grad) accumulate_grad(fn, gf);
    if (pn.requires_grad) accumulate_grad(pn, gp);
  });
}

}  // namespace aftk::ops
