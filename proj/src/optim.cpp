#include "bad/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace bad {

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.beta1 > 0 && config_.beta1 < 1 && config_.beta2 > 0 && config_.beta2 < 1)) {
    throw std::invalid_argument("AdamW moments must lie in (0, 1)");
  }
  for (Parameter* p : params_) {
    if (p->grad.empty()) p->grad = Tensor(p->value.shape());
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void AdamW::step(double learning_rate) {
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  if (learning_rate == 0.0) {
    // Moments still advance so a later non-zero rate sees a consistent state.
    for (std::size_t k = 0; k < params_.size(); ++k) {
      const Tensor& g = params_[k]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        m_[k][i] = static_cast<real>(b1 * m_[k][i] + (1 - b1) * g[i]);
        v_[k][i] = static_cast<real>(b2 * v_[k][i] + (1 - b2) * g[i] * g[i]);
      }
    }
    return;
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double m = b1 * m_[k][i] + (1 - b1) * g;
      const double v = b2 * v_[k][i] + (1 - b2) * g * g;
      m_[k][i] = static_cast<real>(m);
      v_[k][i] = static_cast<real>(v);
      const double update = (m / c1) / (std::sqrt(v / c2) + config_.epsilon) + config_.weight_decay * p.value[i];
      p.value[i] = static_cast<real>(p.value[i] - learning_rate * update);
    }
  }
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0;
  for (const Parameter* p : params) {
    for (real g : p->grad.values()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const real s = static_cast<real>(max_norm / norm);
    for (Parameter* p : params) {
      for (auto& g : p->grad.values()) g *= s;
    }
  }
  return norm;
}

}  // namespace bad
