#include "nbe/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "nbe/error.hpp"

namespace nbe {

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                             const std::vector<double>& x0, const std::vector<double>& step,
                             const NelderMeadOptions& opts) {
  const std::size_t n = x0.size();
  require(n >= 1 && step.size() == n, ErrorKind::InvalidArgument,
          "nelder_mead: x0 and step must be nonempty and equal length");
  // Standard coefficients.
  const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;

  int evals = 0;
  auto eval = [&](const std::vector<double>& x) {
    ++evals;
    const double v = f(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };

  std::vector<std::vector<double>> pts(n + 1, x0);
  std::vector<double> vals(n + 1);
  for (std::size_t i = 0; i < n; ++i) pts[i + 1][i] += step[i];
  for (std::size_t i = 0; i <= n; ++i) vals[i] = eval(pts[i]);

  std::vector<std::size_t> order(n + 1);
  std::vector<double> centroid(n), xr(n), xe(n), xc(n);
  bool converged = false;
  while (evals < opts.max_evals) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const std::size_t best = order[0], worst = order[n], second = order[n - 1];

    double diam = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        diam = std::max(diam, std::abs(pts[order[i]][j] - pts[best][j]));
      }
    }
    const double spread = vals[worst] - vals[best];
    if (std::isfinite(vals[worst]) && spread <= opts.f_tol && diam <= opts.x_tol) {
      converged = true;
      break;
    }
    if (diam <= 1e-15) {
      converged = std::isfinite(vals[best]);
      break;
    }

    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) centroid[j] += pts[order[i]][j] / n;
    }
    for (std::size_t j = 0; j < n; ++j) {
      xr[j] = centroid[j] + alpha * (centroid[j] - pts[worst][j]);
    }
    const double fr = eval(xr);
    if (fr < vals[best]) {
      for (std::size_t j = 0; j < n; ++j) {
        xe[j] = centroid[j] + gamma * (xr[j] - centroid[j]);
      }
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    // Contraction: outside if the reflection improved on the worst point.
    const bool outside = fr < vals[worst];
    for (std::size_t j = 0; j < n; ++j) {
      xc[j] = outside ? centroid[j] + rho * (xr[j] - centroid[j])
                      : centroid[j] + rho * (pts[worst][j] - centroid[j]);
    }
    const double fc = eval(xc);
    if (fc < (outside ? fr : vals[worst])) {
      pts[worst] = xc;
      vals[worst] = fc;
      continue;
    }
    for (std::size_t i = 1; i <= n; ++i) {
      auto& p = pts[order[i]];
      for (std::size_t j = 0; j < n; ++j) p[j] = pts[best][j] + sigma * (p[j] - pts[best][j]);
      vals[order[i]] = eval(p);
    }
  }

  const std::size_t best =
      static_cast<std::size_t>(std::min_element(vals.begin(), vals.end()) - vals.begin());
  return {pts[best], vals[best], evals, converged};
}

}  // namespace nbe
