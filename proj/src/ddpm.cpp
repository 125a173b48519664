#include "seldiff/ddpm.hpp"

#include <cmath>
#include <stdexcept>

namespace seldiff {

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  sched.check_timestep(t);
  if (x0.shape() != eps.shape()) {
    throw ShapeError("forward_noise: x0 " + shape_string(x0.shape()) + " vs eps " + shape_string(eps.shape()));
  }
  const double a = std::sqrt(sched.alpha_bar[t]);
  const double s = sched.sigma[t];
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + s * eps[i];
  return out;
}

Tensor forward_noise(const Tensor& x0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& sched) {
  if (x0.shape() != eps.shape()) {
    throw ShapeError("forward_noise: x0 " + shape_string(x0.shape()) + " vs eps " + shape_string(eps.shape()));
  }
  if (t.size() != x0.rows()) {
    throw ShapeError("forward_noise: " + std::to_string(t.size()) + " timesteps for " +
                     std::to_string(x0.rows()) + " rows");
  }
  const std::size_t c = x0.cols();
  Tensor out(x0.shape());
  for (std::size_t r = 0; r < x0.rows(); ++r) {
    sched.check_timestep(t[r]);
    const double a = std::sqrt(sched.alpha_bar[t[r]]);
    const double s = sched.sigma[t[r]];
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = a * x0[r * c + j] + s * eps[r * c + j];
  }
  return out;
}

Var per_sample_error(Graph& g, Var pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("prediction " + shape_string(pred.shape()) + " vs target " + shape_string(target.shape()));
  }
  const double inv_d = 1.0 / static_cast<double>(target.cols());
  return g.scale(g.sum_rows(g.square(g.sub(pred, g.constant(target)))), inv_d);
}

Var weighted_sum(Graph& g, Var err, std::span<const double> coeff) {
  if (err.value().numel() != coeff.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(coeff.size()) + " coefficients for error " +
                     shape_string(err.shape()));
  }
  Tensor c(Shape{coeff.size(), 1}, std::vector<double>(coeff.begin(), coeff.end()));
  return g.sum(g.mul(err, g.constant(std::move(c))));
}

Var epsilon_loss(Graph& g, const Denoiser& model, std::span<const Var> params, const Tensor& x0,
                 std::span<const int> t, const Tensor& eps, const NoiseSchedule& sched) {
  if (x0.rows() == 0) throw std::invalid_argument("epsilon_loss on empty batch");
  Tensor xt = forward_noise(x0, t, eps, sched);
  Var pred = model.forward(g, params, g.constant(std::move(xt)), t);
  std::vector<double> coeff(t.size());
  const double inv_b = 1.0 / static_cast<double>(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) coeff[i] = sched.loss_weight[t[i]] * inv_b;
  return weighted_sum(g, per_sample_error(g, pred, eps), coeff);
}

Tensor reverse_update(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched,
                      const std::optional<Tensor>& noise) {
  sched.check_timestep(t);
  if (x_t.shape() != eps_hat.shape()) {
    throw ShapeError("reverse_update: x_t " + shape_string(x_t.shape()) + " vs eps_hat " +
                     shape_string(eps_hat.shape()));
  }
  const double beta = sched.beta[t];
  const double alpha = 1.0 - beta;
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  const double eps_coef = beta / sched.sigma[t];
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = inv_sqrt_alpha * (x_t[i] - eps_coef * eps_hat[i]);
  if (t > 0 && noise) {
    if (noise->shape() != x_t.shape()) throw ShapeError("reverse_update: noise shape mismatch");
    // posterior variance beta_tilde
    const double var = beta * (1.0 - sched.alpha_bar_prev(t)) / (1.0 - sched.alpha_bar[t]);
    const double sd = std::sqrt(var);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += sd * (*noise)[i];
  }
  return out;
}

Tensor reverse_step(const Denoiser& model, const Tensor& x_t, int t, const NoiseSchedule& sched,
                    const std::optional<Tensor>& noise) {
  sched.check_timestep(t);
  return reverse_update(x_t, model.predict(x_t, t), t, sched, noise);
}

namespace {

Tensor run_reverse(const Denoiser& model, Tensor x, int from, const NoiseSchedule& sched, Rng& rng) {
  for (int t = from; t >= 0; --t) {
    std::optional<Tensor> z;
    if (t > 0) z = rng.normal_tensor(x.shape());
    x = reverse_step(model, x, t, sched, z);
  }
  return x;
}

}  // namespace

Tensor denoise_from(const Denoiser& model, const Tensor& x0, int t_start, const NoiseSchedule& sched,
                    std::uint64_t seed) {
  if (t_start < 0 || t_start > sched.T) {
    throw std::out_of_range("denoise_from: t_start " + std::to_string(t_start) + " outside [0, " +
                            std::to_string(sched.T) + "]");
  }
  if (t_start == 0) return x0;
  Rng rng(seed);
  Tensor eps = rng.normal_tensor(x0.shape());
  Tensor xt = forward_noise(x0, t_start - 1, eps, sched);
  return run_reverse(model, std::move(xt), t_start - 1, sched, rng);
}

Tensor sample(const Denoiser& model, const NoiseSchedule& sched, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("sample: n must be at least 1");
  Rng rng(seed);
  Tensor x = rng.normal_tensor(Shape{n, model.arch().data_dim});
  return run_reverse(model, std::move(x), sched.T - 1, sched, rng);
}

}  // namespace seldiff
