#include "seldiff/grad_check.hpp"

#include <cmath>
#include <limits>

namespace seldiff {
namespace {

double evaluate(const MultiLossFn& f, const std::vector<Tensor>& params) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(g.parameter(p));
  return f(g, vars).value().item();
}

}  // namespace

double grad_check(const MultiLossFn& f, const std::vector<Tensor>& params, double step) try {
  Gradients analytic;
  {
    Graph g;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(g.parameter(p));
    analytic = g.backward(f(g, vars));
  }

  double worst = 0.0;
  std::vector<Tensor> probe = params;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].numel(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + step;
      const double fp = evaluate(f, probe);
      probe[k][i] = orig - step;
      const double fm = evaluate(f, probe);
      probe[k][i] = orig;
      const double cd = (fp - fm) / (2.0 * step);
      const double a = analytic[k][i];
      const double err = std::abs(a - cd) / (std::abs(a) + std::abs(cd) + 1e-12);
      if (std::isnan(err)) return std::numeric_limits<double>::quiet_NaN();
      worst = std::max(worst, err);
    }
  }
  return worst;
} catch (const NumericError&) {
  return std::numeric_limits<double>::quiet_NaN();
}

double grad_check(const LossFn1& f, const Tensor& x, double step) {
  MultiLossFn wrapped = [&f](Graph& g, std::span<const Var> vars) { return f(g, vars[0]); };
  return grad_check(wrapped, std::vector<Tensor>{x}, step);
}

}  // namespace seldiff
