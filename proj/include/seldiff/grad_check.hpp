#pragma once

#include <functional>
#include <span>
#include <vector>

#include "seldiff/autodiff.hpp"

namespace seldiff {

/// Builds a scalar loss from graph parameters registered in the order given.
using MultiLossFn = std::function<Var(Graph&, std::span<const Var>)>;
using LossFn1 = std::function<Var(Graph&, Var)>;

/// Max over coordinates of |analytic - central difference| / (|analytic| + |cd| + 1e-12).
/// NaN anywhere propagates into the result.
double grad_check(const LossFn1& f, const Tensor& x, double step = 1e-5);
double grad_check(const MultiLossFn& f, const std::vector<Tensor>& params, double step = 1e-5);

}  // namespace seldiff
