// SPDX-License-Identifier: Apache-2.0
#include "aftk/optim.hpp"

#include <cmath>

#include "aftk/errors.hpp"

namespace aftk {

namespace {
const Tensor& grad_or_empty(const Var& p) { return p.node()->grad; }
}  // namespace

Adam::Adam(std::vector<Var> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape(), 0.0);
    v_.emplace_back(p.shape(), 0.0);
  }
}

void Adam::step(double lr) {
  if (lr < 0.0) throw ParameterError("Adam: negative learning rate");
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& g = grad_or_empty(params_[i]);
    if (g.size() != params_[i].size()) continue;  // untouched by the last backward pass
    Tensor& value = params_[i].mutable_value();
    for (std::size_t k = 0; k < value.size(); ++k) {
      m_[i][k] = b1 * m_[i][k] + (1.0 - b1) * g[k];
      v_[i][k] = b2 * v_[i][k] + (1.0 - b2) * g[k] * g[k];
      const double mhat = m_[i][k] / c1;
      const double vhat = v_[i][k] / c2;
      value[k] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
    if (!value.all_finite()) throw NumericError("Adam produced a non-finite parameter");
  }
}

Checkpoint Adam::state() const {
  Checkpoint c;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    c.add("m." + std::to_string(i), m_[i]);
    c.add("v." + std::to_string(i), v_[i]);
  }
  c.add("t", Tensor::scalar(static_cast<double>(t_)));
  return c;
}

void Adam::load_state(const Checkpoint& state) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& m = state.get("m." + std::to_string(i));
    const Tensor& v = state.get("v." + std::to_string(i));
    if (m.shape() != params_[i].shape() || v.shape() != params_[i].shape())
      throw IoError("optimizer state does not match parameter shapes");
    m_[i] = m;
    v_[i] = v;
  }
  t_ = static_cast<std::size_t>(state.get("t").item());
}

double global_grad_norm(const std::vector<Var>& params) {
  double s = 0.0;
  for (const auto& p : params)
    for (double g : grad_or_empty(p).values()) s += g * g;
  return std::sqrt(s);
}

double clip_grad_norm(const std::vector<Var>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (const auto& p : params)
      for (double& g : p.node()->grad.values()) g *= f;
  }
  return norm;
}

}  // namespace aftk
