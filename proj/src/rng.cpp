#include "seldiff/rng.hpp"

#include <cmath>
#include <numbers>

namespace seldiff {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Tensor Rng::normal_tensor(Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = normal();
  return t;
}

}  // namespace seldiff
