#pragma once

#include <cstdint>
#include <random>

#include "seldiff/tensor.hpp"

namespace seldiff {

/// Seeded random source with platform-independent output.
///
/// std::mt19937_64 is fully specified by the standard; the std distributions
/// are not, so uniform/normal conversions are done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }

  /// Standard normal via Box-Muller; both variates of a pair are used.
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  /// Tensor of i.i.d. standard normals.
  Tensor normal_tensor(Shape shape);

  /// Independent child stream derived from this one.
  Rng split() { return Rng(engine_()); }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace seldiff
