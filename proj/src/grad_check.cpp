#include "himix/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace himix::ad {
namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& params) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(g.leaf_ref(p, false));
  const double v = f(g, leaves).value().data.at(0);
  if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
  return v;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelErrorFloor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const ScalarFn& f, std::vector<Tensor> params, double eps,
                           std::size_t max_coords_per_param) {
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> leaves;
    for (const Tensor& p : params) leaves.push_back(g.leaf_ref(p, true));
    Var loss = f(g, leaves);
    if (!std::isfinite(loss.value().data.at(0))) throw NumericError("grad_check: loss is not finite");
    g.backward(loss);
    for (std::size_t k = 0; k < params.size(); ++k) {
      const Tensor* gr = g.grad(leaves[k]);
      analytic.push_back(gr ? *gr : Tensor(params[k].shape, 0.0));
      for (double v : analytic.back().data) {
        if (!std::isfinite(v)) throw NumericError("grad_check: analytic gradient is not finite");
      }
    }
  }

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::size_t n = params[k].size();
    const std::size_t probes = max_coords_per_param == 0 ? n : std::min(n, max_coords_per_param);
    for (std::size_t j = 0; j < probes; ++j) {
      const std::size_t i = probes == n ? j : (j * n) / probes;
      const double saved = params[k].data[i];
      params[k].data[i] = saved + eps;
      const double up = evaluate(f, params);
      params[k].data[i] = saved - eps;
      const double down = evaluate(f, params);
      params[k].data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic[k].data[i], numeric);
      ++result.coords_checked;
      if (result.coords_checked == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = k;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace himix::ad
