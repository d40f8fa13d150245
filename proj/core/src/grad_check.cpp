#include "hyspec/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace hyspec::numerics {
namespace {

double eval_scalar(const std::function<Var<double>()>& f, std::size_t param, std::int64_t index) {
  NoGradGuard ng;
  const Var<double> y = f();
  if (y.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  const double v = y.item();
  if (!std::isfinite(v)) {
    throw NumericError("grad_check: non-finite value at param " + std::to_string(param) + " coordinate " +
                       std::to_string(index));
  }
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Var<double>()>& f, std::vector<Var<double>> params, double h) {
  if (!(h >= 1e-6 && h <= 1e-3)) throw ConfigError("grad_check: step must lie in [1e-6, 1e-3]");
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  const Var<double> y = f();
  if (y.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  backward(y);

  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    auto& vals = p.mutable_value().vec();
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const double analytic = p.has_grad() ? p.grad()[i] : 0.0;
      if (!std::isfinite(analytic)) {
        throw NumericError("grad_check: non-finite analytic gradient at param " + std::to_string(pi) +
                           " coordinate " + std::to_string(i));
      }
      const double orig = vals[ui];
      vals[ui] = orig + h;
      const double fp = eval_scalar(f, pi, i);
      vals[ui] = orig - h;
      const double fm = eval_scalar(f, pi, i);
      vals[ui] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
      const double err = std::abs(analytic - numeric) / denom;
      ++res.coordinates;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = pi;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace hyspec::numerics
