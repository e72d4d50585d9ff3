#pragma once

#include <functional>
#include <vector>

namespace nbe {

struct NelderMeadOptions {
  int max_evals = 2000;
  double f_tol = 1e-10;  // spread of simplex values
  double x_tol = 1e-8;   // simplex diameter
};

struct NelderMeadResult {
  std::vector<double> x;
  double f = 0.0;
  int evals = 0;
  bool converged = false;
};

/// Minimizes f from x0 with initial simplex offsets `step` per coordinate.
/// f may return +inf to reject a point (e.g. outside a support).
NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                             const std::vector<double>& x0, const std::vector<double>& step,
                             const NelderMeadOptions& opts = {});

}  // namespace nbe
