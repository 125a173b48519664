#include "seldiff/denoiser.hpp"

#include <cmath>
#include <stdexcept>

namespace seldiff {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::silu: return "silu";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

Activation activation_from_string(const std::string& name) {
  if (name == "silu") return Activation::silu;
  if (name == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

Tensor timestep_embedding(std::span<const int> t, std::size_t dim) {
  if (dim % 2 != 0) throw std::invalid_argument("timestep embedding width must be even, got " + std::to_string(dim));
  const std::size_t half = dim / 2;
  Tensor out(Shape{t.size(), dim});
  for (std::size_t r = 0; r < t.size(); ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double a = static_cast<double>(t[r]) * freq;
      out.at(r, i) = std::sin(a);
      out.at(r, half + i) = std::cos(a);
    }
  }
  return out;
}

Tensor input_features(const Tensor& x, std::size_t octaves) {
  const std::size_t D = x.cols();
  const std::size_t F = 2 * octaves * D;
  Tensor out(Shape{x.rows(), F});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t k = 0; k < octaves; ++k) {
        const double a = std::ldexp(x.at(r, d), static_cast<int>(k));
        out.at(r, 2 * (d * octaves + k)) = std::sin(a);
        out.at(r, 2 * (d * octaves + k) + 1) = std::cos(a);
      }
    }
  }
  return out;
}

std::vector<Shape> Denoiser::parameter_shapes(const DenoiserArch& arch) {
  std::vector<Shape> shapes;
  std::size_t in = arch.data_dim * (1 + 2 * arch.input_octaves) + arch.time_dim;
  for (std::size_t h : arch.hidden) {
    shapes.push_back({in, h});
    shapes.push_back({1, h});
    in = h;
  }
  shapes.push_back({in, arch.data_dim});
  shapes.push_back({1, arch.data_dim});
  return shapes;
}

Denoiser::Denoiser(DenoiserArch arch, std::uint64_t seed) : arch_(std::move(arch)) {
  if (arch_.data_dim == 0) throw std::invalid_argument("denoiser data_dim must be positive");
  if (arch_.time_dim % 2 != 0) throw std::invalid_argument("denoiser time_dim must be even");
  Rng rng(seed);
  for (const Shape& s : parameter_shapes(arch_)) params_.emplace_back(s);
  // weights sit at even slots; rows are fan-in
  for (std::size_t k = 0; k < params_.size(); k += 2) {
    Tensor& w = params_[k];
    const double std = 1.0 / std::sqrt(static_cast<double>(w.shape()[0]));
    for (double& v : w.data()) v = std * rng.normal();
  }
}

Denoiser::Denoiser(DenoiserArch arch, std::vector<Tensor> params) : arch_(std::move(arch)), params_(std::move(params)) {
  const auto shapes = parameter_shapes(arch_);
  if (shapes.size() != params_.size()) {
    throw ShapeError("denoiser expects " + std::to_string(shapes.size()) + " parameter tensors, got " +
                     std::to_string(params_.size()));
  }
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    if (params_[k].numel() != shape_numel(shapes[k])) {
      throw ShapeError("denoiser parameter " + std::to_string(k) + " expected " + shape_string(shapes[k]) +
                       ", got " + shape_string(params_[k].shape()));
    }
    params_[k] = params_[k].reshaped(shapes[k]);
  }
}

std::size_t Denoiser::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

std::vector<Var> Denoiser::bind(Graph& g) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(g.parameter(p));
  return vars;
}

void Denoiser::check_input(const Tensor& x, std::span<const int> t) const {
  if (x.rank() != 2 || x.cols() != arch_.data_dim) {
    throw ShapeError("denoiser input must be (batch, " + std::to_string(arch_.data_dim) + "), got " +
                     shape_string(x.shape()));
  }
  if (t.size() != x.rows()) {
    throw ShapeError("denoiser got " + std::to_string(t.size()) + " timesteps for batch of " +
                     std::to_string(x.rows()));
  }
}

Var Denoiser::forward(Graph& g, std::span<const Var> params, Var x, std::span<const int> t) const {
  check_input(x.value(), t);
  Var h = arch_.input_octaves > 0 ? g.concat(x, g.constant(input_features(x.value(), arch_.input_octaves))) : x;
  if (arch_.time_dim > 0) h = g.concat(h, g.constant(timestep_embedding(t, arch_.time_dim)));
  const std::size_t layers = params.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    h = g.add(g.matmul(h, params[2 * l]), params[2 * l + 1]);
    if (l + 1 < layers) h = arch_.activation == Activation::silu ? g.silu(h) : g.tanh(h);
  }
  return h;
}

Tensor Denoiser::predict(const Tensor& x, std::span<const int> t) const {
  check_input(x, t);
  Tensor h = arch_.input_octaves > 0 ? kernels::concat_cols(x, input_features(x, arch_.input_octaves)) : x;
  if (arch_.time_dim > 0) h = kernels::concat_cols(h, timestep_embedding(t, arch_.time_dim));
  const std::size_t layers = params_.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    h = kernels::add(kernels::matmul(h, params_[2 * l]), params_[2 * l + 1]);
    if (l + 1 < layers) h = arch_.activation == Activation::silu ? kernels::silu(h) : kernels::tanh(h);
  }
  if (!h.all_finite()) throw NumericError("denoiser produced non-finite output");
  return h;
}

Tensor Denoiser::predict(const Tensor& x, int t) const {
  std::vector<int> ts(x.rows(), t);
  return predict(x, ts);
}

}  // namespace seldiff
