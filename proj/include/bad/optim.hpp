#pragma once

#include <span>
#include <vector>

#include "bad/autodiff.hpp"

namespace bad {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

// Adaptive moments with decoupled weight decay:
//   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWConfig config);

  void step(double learning_rate);
  void zero_grad();
  std::size_t steps_taken() const { return t_; }
  const AdamWConfig& config() const { return config_; }
  std::span<Parameter* const> parameters() const { return params_; }

  // Moment buffers, exposed for checkpointing.
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  void set_steps_taken(std::size_t t) { t_ = t; }

 private:
  std::vector<Parameter*> params_;
  AdamWConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t t_ = 0;
};

// Scales all gradients so that their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

}  // namespace bad
