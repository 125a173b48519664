#pragma once

#include <vector>

#include "seldiff/autodiff.hpp"

namespace seldiff {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. State is sized lazily on the first step.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(std::vector<Tensor>& params, const Gradients& grads);

  const AdamConfig& config() const noexcept { return cfg_; }
  void set_learning_rate(double lr) noexcept { cfg_.learning_rate = lr; }
  long steps() const noexcept { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

/// Rescales grads in place so their global norm is at most max_norm. Returns the
/// norm before clipping. max_norm <= 0 disables clipping.
double clip_global_norm(Gradients& grads, double max_norm);

}  // namespace seldiff
