#include "seldiff/optim.hpp"

#include <cmath>

namespace seldiff {

void Adam::step(std::vector<Tensor>& params, const Gradients& grads) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("Adam::step: " + std::to_string(params.size()) + " parameters but " +
                                std::to_string(grads.size()) + " gradients");
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].data();
    auto g = grads[k].data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    if (g.size() != p.size()) throw ShapeError("Adam::step: gradient shape mismatch at parameter " + std::to_string(k));
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      p[i] -= cfg_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.epsilon);
    }
  }
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g.data()) v *= f;
  }
  return norm;
}

}  // namespace seldiff
