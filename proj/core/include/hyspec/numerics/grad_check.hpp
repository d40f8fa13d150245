#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hyspec/numerics/autodiff.hpp"

namespace hyspec::numerics {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::int64_t worst_index = 0;
  std::int64_t coordinates = 0;
};

// Compares reverse-mode gradients of the scalar `f` w.r.t. `params` against
// central differences with step h. Relative error per coordinate is
// |a - n| / max(1, |a|, |n|). `f` must be deterministic (reseed any rng
// inside it). Only the 64-bit element type is supported.
GradCheckResult grad_check(const std::function<Var<double>()>& f, std::vector<Var<double>> params,
                           double h = 1e-5);

}  // namespace hyspec::numerics
