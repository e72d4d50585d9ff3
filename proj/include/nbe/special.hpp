#pragma once

namespace nbe {

/// Modified Bessel function of the second kind K_nu(x), real nu, x > 0.
/// Temme's series for x < 2, Steed's continued fraction otherwise, then
/// forward recurrence in the order.
double bessel_k(double nu, double x);
/// K_nu(x) * exp(x); avoids underflow for large x.
double bessel_k_scaled(double nu, double x);
/// log K_nu(x), finite for large x.
double log_bessel_k(double nu, double x);

}  // namespace nbe
