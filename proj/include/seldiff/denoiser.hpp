#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "seldiff/autodiff.hpp"
#include "seldiff/rng.hpp"

namespace seldiff {

enum class Activation { silu, tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Shape of an epsilon-prediction MLP.
struct DenoiserArch {
  std::size_t data_dim = 2;
  std::vector<std::size_t> hidden{64, 64};
  /// Width of the sinusoidal timestep embedding concatenated to the input. 0 disables conditioning.
  std::size_t time_dim = 16;
  /// Octaves of sin/cos input features per data coordinate (frequencies 2^k,
  /// k < input_octaves), concatenated to the input. 0 disables them. The
  /// features are constants of x: gradients flow to parameters only.
  std::size_t input_octaves = 0;
  Activation activation = Activation::silu;

  friend bool operator==(const DenoiserArch&, const DenoiserArch&) = default;
};

/// (batch, 2 * octaves * D) features [sin(2^k x_d) | cos(2^k x_d)] ordered by d then k.
Tensor input_features(const Tensor& x, std::size_t octaves);

/// Sinusoidal embedding of integer timesteps, one row per entry: [sin(t f_i) | cos(t f_i)].
Tensor timestep_embedding(std::span<const int> t, std::size_t dim);

/// MLP predicting the injected noise from (x_t, t).
///
/// Parameters are stored as W0, b0, W1, b1, ... with W_l of shape (in, out) and
/// b_l of shape (1, out). Inputs are (batch, data_dim) matrices.
class Denoiser {
 public:
  Denoiser() = default;
  /// Random initialisation with N(0, 1/fan_in) weights and zero biases.
  Denoiser(DenoiserArch arch, std::uint64_t seed);
  /// Takes ownership of explicit parameters; shapes must match the arch.
  Denoiser(DenoiserArch arch, std::vector<Tensor> params);

  const DenoiserArch& arch() const noexcept { return arch_; }
  const std::vector<Tensor>& params() const noexcept { return params_; }
  std::vector<Tensor>& params() noexcept { return params_; }
  std::size_t num_scalars() const;

  /// Registers every parameter with the graph, in declaration order.
  std::vector<Var> bind(Graph& g) const;

  /// Differentiable forward pass using variables returned by bind().
  Var forward(Graph& g, std::span<const Var> params, Var x, std::span<const int> t) const;

  /// Graph-free forward pass; bitwise equal to forward().
  Tensor predict(const Tensor& x, std::span<const int> t) const;
  /// Same timestep for every row.
  Tensor predict(const Tensor& x, int t) const;

  /// Expected parameter shapes for an arch.
  static std::vector<Shape> parameter_shapes(const DenoiserArch& arch);

 private:
  void check_input(const Tensor& x, std::span<const int> t) const;

  DenoiserArch arch_;
  std::vector<Tensor> params_;
};

}  // namespace seldiff
