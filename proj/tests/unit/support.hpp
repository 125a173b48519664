#pragma once

// Hand-rolled generators and small oracles shared by the unit tests.

#include <cmath>
#include <cstdint>
#include <vector>

#include "seldiff/denoiser.hpp"
#include "seldiff/rng.hpp"
#include "seldiff/schedule.hpp"
#include "seldiff/tensor.hpp"

namespace seldiff::test {

/// Uniform entries in [lo, hi).
inline Tensor uniform_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

/// Random dimension in [lo, hi].
inline std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.uniform_index(hi - lo + 1); }

/// Small two-hidden-layer tanh denoiser.
inline Denoiser small_model(std::size_t data_dim, std::uint64_t seed, std::size_t width = 6) {
  DenoiserArch arch;
  arch.data_dim = data_dim;
  arch.hidden = {width, width};
  arch.time_dim = 4;
  arch.activation = Activation::tanh;
  return Denoiser(arch, seed);
}

/// Linear model eps_hat = x W + b with no time input.
inline Denoiser linear_model(const Tensor& W, const Tensor& b) {
  DenoiserArch arch;
  arch.data_dim = W.rows();
  arch.hidden = {};
  arch.time_dim = 0;
  return Denoiser(arch, std::vector<Tensor>{W, b});
}

inline NoiseSchedule toy_schedule(int T = 50) { return make_schedule(T, 1e-3, 0.2); }

/// Straight-line scalar forward pass of an MLP denoiser for one row.
inline std::vector<double> scalar_forward(const Denoiser& m, const std::vector<double>& x, int t) {
  const DenoiserArch& a = m.arch();
  std::vector<double> h = x;
  if (a.time_dim > 0) {
    const std::size_t half = a.time_dim / 2;
    for (std::size_t i = 0; i < half; ++i) h.push_back(std::sin(t * std::pow(10000.0, -double(i) / double(half))));
    for (std::size_t i = 0; i < half; ++i) h.push_back(std::cos(t * std::pow(10000.0, -double(i) / double(half))));
  }
  const auto& p = m.params();
  const std::size_t layers = p.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    const Tensor& W = p[2 * l];
    const Tensor& b = p[2 * l + 1];
    std::vector<double> out(W.cols());
    for (std::size_t j = 0; j < W.cols(); ++j) {
      double s = b[j];
      for (std::size_t i = 0; i < W.rows(); ++i) s += h[i] * W.at(i, j);
      if (l + 1 < layers) s = a.activation == Activation::tanh ? std::tanh(s) : s / (1.0 + std::exp(-s));
      out[j] = s;
    }
    h = std::move(out);
  }
  return h;
}

}  // namespace seldiff::test
