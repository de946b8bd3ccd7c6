#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "himix/autodiff.hpp"

namespace himix::ad {

/// Builds a scalar loss from leaves holding the current parameter values.
using ScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
};

/// Denominator floor. Central differences of an O(1) loss carry about
/// 1e-11 of rounding noise at eps = 1e-5, which must not register as error
/// where the true gradient is exactly zero (dead ReLU units).
inline constexpr double kRelErrorFloor = 1e-6;

/// |analytic - numeric| / max(|analytic|, |numeric|, kRelErrorFloor).
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients against central differences with step
/// `eps`. With `max_coords_per_param` > 0, each parameter is probed at that
/// many evenly spaced coordinates instead of all of them.
GradCheckResult grad_check(const ScalarFn& f, std::vector<Tensor> params, double eps = 1e-5,
                           std::size_t max_coords_per_param = 0);

}  // namespace himix::ad
