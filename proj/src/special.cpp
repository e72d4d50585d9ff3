#include "nbe/special.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "nbe/error.hpp"

namespace nbe {

namespace {

constexpr double kEps = 1e-16;

// Taylor coefficients of 1/Gamma(1+z) about 0.
constexpr double kRecipGamma[] = {
    1.0,
    0.57721566490153286,
    -0.65587807152025388,
    -0.042002635034095236,
    0.16653861138229149,
    -0.042197734555544337,
    -0.0096219715278769736,
    0.0072189432466630995,
    -0.0011651675918590651,
    -0.00021524167411495097,
    0.00012805028238811619,
    -2.0134854780788239e-5,
    -1.2504934821426707e-6,
    1.1330272319816959e-6,
    -2.0563384169776071e-7,
    6.1160951044814158e-9,
    5.0020076444692229e-9,
    -1.1812745704870201e-9,
    1.0434267116911005e-10,
    7.7822634399050713e-12,
    -3.6968056186422057e-12,
    5.100370287454476e-13,
    -2.0583260535665068e-14,
};
constexpr int kRecipGammaN = sizeof(kRecipGamma) / sizeof(double);

// gam1 = (1/G(1-mu) - 1/G(1+mu)) / (2 mu), gam2 = (1/G(1-mu) + 1/G(1+mu)) / 2
void temme_gammas(double mu, double& gam1, double& gam2, double& gampl, double& gammi) {
  // odd collects c_k mu^(k-1) over odd k
  double even = 0.0, odd = 0.0, p = 1.0;  // p = mu^(k - k%2)
  for (int k = 0; k < kRecipGammaN; ++k) {
    if (k % 2 == 0) {
      even += kRecipGamma[k] * p;
    } else {
      odd += kRecipGamma[k] * p;
      p *= mu * mu;
    }
  }
  gampl = even + mu * odd;
  gammi = even - mu * odd;
  gam1 = -odd;
  gam2 = even;
}

// K_mu(x) and K_{mu+1}(x) scaled by exp(x) for |mu| <= 1/2.
void k_pair_small_order(double mu, double x, double& kmu, double& kmu1) {
  const double pi = std::numbers::pi;
  const double mu2 = mu * mu;
  if (x < 2.0) {
    const double x2 = 0.5 * x;
    const double pimu = pi * mu;
    const double fact = std::abs(pimu) < kEps ? 1.0 : pimu / std::sin(pimu);
    double d = -std::log(x2);
    double e = mu * d;
    const double fact2 = std::abs(e) < kEps ? 1.0 : std::sinh(e) / e;
    double gam1, gam2, gampl, gammi;
    temme_gammas(mu, gam1, gam2, gampl, gammi);
    double ff = fact * (gam1 * std::cosh(e) + gam2 * fact2 * d);
    double sum = ff;
    e = std::exp(e);
    double p = 0.5 * e / gampl;
    double q = 0.5 / (e * gammi);
    double c = 1.0;
    d = x2 * x2;
    double sum1 = p;
    for (int i = 1; i < 1000; ++i) {
      const double di = i;
      ff = (di * ff + p + q) / (di * di - mu2);
      c *= d / di;
      p /= di - mu;
      q /= di + mu;
      const double del = c * ff;
      sum += del;
      sum1 += c * (p - di * ff);
      if (std::abs(del) < std::abs(sum) * kEps) break;
    }
    const double ex = std::exp(x);
    kmu = sum * ex;
    kmu1 = sum1 * (2.0 / x) * ex;
  } else {
    double b = 2.0 * (1.0 + x);
    double d = 1.0 / b;
    double h = d, delh = d;
    double q1 = 0.0, q2 = 1.0;
    const double a1 = 0.25 - mu2;
    double q = a1, c = a1;
    double a = -a1;
    double s = 1.0 + q * delh;
    for (int i = 2; i < 100000; ++i) {
      a -= 2.0 * (i - 1);
      c = -a * c / i;
      const double qnew = (q1 - b * q2) / a;
      q1 = q2;
      q2 = qnew;
      q += c * qnew;
      b += 2.0;
      d = 1.0 / (b + a * d);
      delh = (b * d - 1.0) * delh;
      h += delh;
      const double dels = q * delh;
      s += dels;
      if (std::abs(dels / s) < kEps) break;
    }
    h = a1 * h;
    kmu = std::sqrt(pi / (2.0 * x)) / s;
    kmu1 = kmu * (mu + x + 0.5 - h) / x;
  }
}

}  // namespace

double bessel_k_scaled(double nu, double x) {
  require(x > 0.0, ErrorKind::InvalidArgument, "bessel_k: x must be > 0");
  nu = std::abs(nu);
  const int nl = static_cast<int>(nu + 0.5);
  const double mu = nu - nl;
  double kmu, kmu1;
  k_pair_small_order(mu, x, kmu, kmu1);
  for (int i = 1; i <= nl; ++i) {
    const double next = (mu + i) * (2.0 / x) * kmu1 + kmu;
    kmu = kmu1;
    kmu1 = next;
  }
  return kmu;
}

double bessel_k(double nu, double x) {
  const double s = bessel_k_scaled(nu, x);
  return s * std::exp(-x);
}

double log_bessel_k(double nu, double x) { return std::log(bessel_k_scaled(nu, x)) - x; }

}  // namespace nbe
