#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "seldiff/denoiser.hpp"
#include "seldiff/schedule.hpp"

namespace seldiff {

/// sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps, same t for every element.
Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

/// Row-wise forward noising: row i uses timestep t[i].
Tensor forward_noise(const Tensor& x0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& sched);

/// Per-sample mean squared error, shape (batch, 1): mean_j (pred_ij - target_ij)^2.
Var per_sample_error(Graph& g, Var pred, const Tensor& target);

/// sum_i coeff[i] * err[i] for a (batch, 1) error column.
Var weighted_sum(Graph& g, Var err, std::span<const double> coeff);

/// Epsilon-matching loss: (1/B) sum_i w_{t_i} * mean_j (eps_hat_ij - eps_ij)^2.
Var epsilon_loss(Graph& g, const Denoiser& model, std::span<const Var> params, const Tensor& x0,
                 std::span<const int> t, const Tensor& eps, const NoiseSchedule& sched);

/// Ancestral DDPM update from index t to t-1 given a noise prediction.
/// noise == nullopt means the deterministic posterior mean. At t == 0 no noise is added.
Tensor reverse_update(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched,
                      const std::optional<Tensor>& noise);

Tensor reverse_step(const Denoiser& model, const Tensor& x_t, int t, const NoiseSchedule& sched,
                    const std::optional<Tensor>& noise);

/// Memorisation probe: noise x0 for `t_start` forward steps (to index t_start - 1)
/// with fresh noise, then run t_start reverse steps back to data. t_start == 0
/// returns x0 unchanged.
Tensor denoise_from(const Denoiser& model, const Tensor& x0, int t_start, const NoiseSchedule& sched,
                    std::uint64_t seed);

/// n ancestral samples starting from N(0, I) at index T-1.
Tensor sample(const Denoiser& model, const NoiseSchedule& sched, std::size_t n, std::uint64_t seed);

}  // namespace seldiff
