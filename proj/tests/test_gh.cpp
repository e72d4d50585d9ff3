#include <algorithm>
#include <cmath>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "doctest.h"
#include "nbe/error.hpp"
#include "nbe/model_gh.hpp"
#include "nbe/special.hpp"

using namespace nbe;
using boost::math::quadrature::exp_sinh;
using boost::math::quadrature::gauss;
using boost::math::quadrature::tanh_sinh;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Integral over (0, inf), split at `c`.
template <typename F>
double integrate_positive(F f, double c) {
  tanh_sinh<double> ts;
  exp_sinh<double> es;
  return ts.integrate(f, 0.0, c, 1e-13) + es.integrate(f, c, kInf, 1e-13);
}

template <typename F>
double integrate_line(F f, double c) {
  exp_sinh<double> es;
  auto g = [&](double x) { return f(-x); };
  return es.integrate(g, -c, kInf, 1e-13) + es.integrate(f, c, kInf, 1e-13);
}

// Kolmogorov-Smirnov statistic of samples against a density, with the CDF
// accumulated by Gauss-Legendre between consecutive sorted samples.
template <typename F>
double ks_statistic(std::vector<double> xs, F density, double lower_mass) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double cdf = lower_mass, d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) cdf += gauss<double, 15>::integrate(density, xs[i - 1], xs[i]);
    d = std::max({d, std::abs(cdf - i / n), std::abs(cdf - (i + 1) / n)});
  }
  return d;
}

GHSpec random_spec(std::size_t n, Rng& rng) {
  GHSpec s;
  s.mu = Eigen::VectorXd::Zero(n);
  s.alpha = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.mu[i] = uniform01(rng) - 0.5;
    s.alpha[i] = 0.6 * uniform01(rng) - 0.3;
  }
  Eigen::MatrixXd a = Eigen::MatrixXd::Random(n, n);
  s.sigma = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
  s.omega = 0.1 + 1.9 * uniform01(rng);
  s.phi = 0.5 + uniform01(rng);
  s.lambda = 2.0 * uniform01(rng) - 1.0;
  return s;
}

GHSpec bivariate(double alpha, double omega, double lambda, double r) {
  GHSpec s;
  s.mu = Eigen::Vector2d::Zero();
  s.alpha = Eigen::Vector2d::Constant(alpha);
  s.sigma.resize(2, 2);
  s.sigma << 1.0, r, r, 1.0;
  s.omega = omega;
  s.phi = 1.0;
  s.lambda = lambda;
  return s;
}

}  // namespace

TEST_CASE("gig density integrates to one across a parameter sweep") {
  double worst = 0.0;
  for (double lambda : {-1.0, -0.45, 0.0, 0.5, 1.0}) {
    for (double omega : {0.1, 0.5, 1.0, 2.0}) {
      for (double phi : {1.0, 2.5}) {
        auto f = [&](double m) { return gig_density(m, omega, phi, lambda); };
        worst = std::max(worst, std::abs(integrate_positive(f, phi) - 1.0));
      }
    }
  }
  CHECK(worst < 1e-6);
  CHECK_THROWS_AS(gig_density(0.0, 1.0, 1.0, 0.0), Error);
  CHECK_THROWS_AS(gig_density(1.0, 0.0, 1.0, 0.0), Error);
}

TEST_CASE("gig at lambda = -1/2 is inverse Gaussian with mean phi and shape omega phi") {
  for (double omega : {0.3, 1.7}) {
    for (double phi : {0.8, 2.0}) {
      const double mu = phi, shape = omega * phi;
      double worst = 0.0;
      for (double m = 0.05; m < 6.0; m += 0.05) {
        const double ig = std::sqrt(shape / (2.0 * M_PI * m * m * m)) *
                          std::exp(-shape * (m - mu) * (m - mu) / (2.0 * mu * mu * m));
        worst = std::max(worst, std::abs(gig_density(m, omega, phi, -0.5) - ig));
      }
      CHECK(worst < 1e-10);
    }
  }
}

TEST_CASE("gig reciprocal symmetry") {
  const double omega = 0.7, phi = 1.3, lambda = 0.6;
  for (double m = 0.1; m < 5.0; m += 0.1) {
    const double r = phi * phi / m;
    CHECK(gig_density(m, omega, phi, lambda) * m ==
          doctest::Approx(gig_density(r, omega, phi, -lambda) * r).epsilon(1e-12));
  }
}

TEST_CASE("gig sampler: KS, mean, positivity, reproducibility") {
  struct Case {
    double omega, phi, lambda;
  };
  for (Case c : {Case{0.5, 1.0, -0.45}, Case{0.1, 1.0, 0.9}, Case{2.0, 1.5, -1.0},
                 Case{1.0, 1.0, 0.0}, Case{0.3, 0.7, 2.5}}) {
    Rng rng(17);
    const GigSampler sampler(c.omega, c.phi, c.lambda);
    const std::size_t N = 100000;
    std::vector<double> xs(N);
    double s = 0.0, ss = 0.0;
    bool positive = true;
    for (auto& x : xs) {
      x = sampler(rng);
      positive = positive && x > 0.0;
      s += x;
    }
    const double mean = s / N;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double se = std::sqrt(ss / (N - 1) / N);
    auto f = [&](double m) { return m > 0.0 ? gig_density(m, c.omega, c.phi, c.lambda) : 0.0; };
    const double xmin = *std::min_element(xs.begin(), xs.end());
    tanh_sinh<double> ts;
    const double below = ts.integrate(f, 0.0, xmin, 1e-13);
    const double quad_mean =
        integrate_positive([&](double m) { return m * f(m); }, c.phi);
    INFO("omega " << c.omega << " phi " << c.phi << " lambda " << c.lambda);
    CHECK(positive);
    CHECK(std::abs(gig_mean(c.omega, c.phi, c.lambda) - quad_mean) < 1e-7 * quad_mean);
    CHECK(std::abs(mean - quad_mean) < 3.0 * se);
    // 1% critical value of the KS statistic, asymptotic 1.628 / sqrt(N).
    CHECK(ks_statistic(xs, f, below) < 1.628 / std::sqrt(static_cast<double>(N)));
  }
  Rng a(3), b(3);
  CHECK(sample_gig(0.5, 1.0, -0.45, a) == sample_gig(0.5, 1.0, -0.45, b));
}

TEST_CASE("univariate GH density integrates to one") {
  for (double alpha : {0.0, 0.25, -0.3}) {
    GHSpec s;
    s.mu = Eigen::VectorXd::Constant(1, 0.2);
    s.alpha = Eigen::VectorXd::Constant(1, alpha);
    s.sigma = Eigen::MatrixXd::Constant(1, 1, 1.3);
    s.omega = 0.5;
    s.phi = 1.0;
    s.lambda = -0.45;
    auto f = [&](double x) { return std::exp(gh_log_density(s, Eigen::VectorXd::Constant(1, x))); };
    CHECK(std::abs(integrate_line(f, 0.0) - 1.0) < 1e-6);
  }
}

TEST_CASE("GH sampler moments and Gaussian limit") {
  Rng rng(5);
  GHSpec s = bivariate(0.2, 0.5, -0.45, 0.6);
  s.mu << 0.1, -0.3;
  const std::size_t N = 100000;
  const double em = gig_mean(s.omega, s.phi, s.lambda);
  const double em2 = integrate_positive(
      [&](double m) { return m * m * gig_density(m, s.omega, s.phi, s.lambda); }, 1.0);
  const double vm = em2 - em * em;
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  std::vector<Eigen::Vector2d> draws(N);
  for (auto& d : draws) {
    d = sample_gh(s, rng);
    sum += d;
  }
  const Eigen::Vector2d mean = sum / N;
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& d : draws) cov += (d - mean) * (d - mean).transpose() / (N - 1);
  const Eigen::Matrix2d want_cov = em * s.sigma + vm * s.alpha * s.alpha.transpose();
  for (int i = 0; i < 2; ++i) {
    const double want = s.mu[i] + em * s.alpha[i];
    CHECK(std::abs(mean[i] - want) < 3.0 * std::sqrt(cov(i, i) / N));
  }
  // Fourth moments are heavy for this mixing law; allow 5% on the covariance.
  CHECK((cov - want_cov).cwiseAbs().maxCoeff() < 0.05 * want_cov.cwiseAbs().maxCoeff());

  GHSpec g = bivariate(0.0, 1e4, 0.3, -0.4);
  g.mu << 1.0, 2.0;
  Eigen::Vector2d gs = Eigen::Vector2d::Zero();
  Eigen::Matrix2d gc = Eigen::Matrix2d::Zero();
  const std::size_t M = 20000;
  for (std::size_t i = 0; i < M; ++i) {
    const Eigen::Vector2d d = sample_gh(g, rng);
    gs += d;
    gc += (d - g.mu) * (d - g.mu).transpose();
  }
  CHECK((gs / M - g.mu).cwiseAbs().maxCoeff() < 4.0 * std::sqrt(1.0 / M));
  CHECK((gc / M - g.sigma).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("conditional closure: factorization identity over random specs") {
  Rng rng(23);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    GHSpec s = random_spec(2, rng);
    const GHSpec m1 = gh_marginal_params(s, {0});
    for (double x1 = -2.0; x1 <= 2.0; x1 += 0.5) {
      const GHSpec c = gh_conditional_params(s, {0}, Eigen::VectorXd::Constant(1, x1));
      for (double x2 = -2.0; x2 <= 2.0; x2 += 0.5) {
        const Eigen::Vector2d z(x1, x2);
        const double lhs = gh_log_density(s, z) - gh_log_density(m1, Eigen::VectorXd::Constant(1, x1));
        const double rhs = gh_log_density(c, Eigen::VectorXd::Constant(1, x2));
        worst = std::max(worst, std::abs(lhs - rhs));
      }
    }
  }
  CHECK(worst < 1e-8);

  // Trivariate with an unordered observed set.
  GHSpec s = random_spec(3, rng);
  const Eigen::Vector3d z(0.3, -0.7, 1.1);
  const GHSpec c = gh_conditional_params(s, {2, 0}, Eigen::Vector2d(z[2], z[0]));
  const GHSpec m = gh_marginal_params(s, {2, 0});
  const double lhs = gh_log_density(s, z) - gh_log_density(m, Eigen::Vector2d(z[2], z[0]));
  CHECK(std::abs(lhs - gh_log_density(c, Eigen::VectorXd::Constant(1, z[1]))) < 1e-8);
  CHECK(c.lambda == doctest::Approx(s.lambda - 1.0));
}

TEST_CASE("conditional params: independence and Gaussian limit") {
  GHSpec s = bivariate(0.2, 0.8, 0.1, 0.0);
  s.mu << 0.5, -0.5;
  const GHSpec c = gh_conditional_params(s, {0}, Eigen::VectorXd::Constant(1, 1.7));
  CHECK(c.mu[0] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(c.alpha[0] == doctest::Approx(0.2).epsilon(1e-15));

  // omega -> inf: Z ~ N(mu + alpha, Sigma); E[Z2 | Z1] approaches kriging.
  GHSpec g = bivariate(0.15, 1e7, 0.4, 0.7);
  g.mu << 0.3, -0.2;
  const double z1 = 1.2;
  const GHSpec cg = gh_conditional_params(g, {0}, Eigen::VectorXd::Constant(1, z1));
  const double cond_mean = cg.mu[0] + gig_mean(cg.omega, cg.phi, cg.lambda) * cg.alpha[0];
  const double kriging = g.mu[1] + g.alpha[1] + 0.7 * (z1 - g.mu[0] - g.alpha[0]);
  CHECK(std::abs(cond_mean - kriging) < 1e-5);

  CHECK_THROWS_AS(gh_conditional_params(s, {}, Eigen::VectorXd()), Error);
  CHECK_THROWS_AS(gh_conditional_params(s, {0, 1}, Eigen::Vector2d(0, 0)), Error);
}

TEST_CASE("marginal params: identity, closure, projected samples") {
  Rng rng(31);
  GHSpec s = random_spec(3, rng);
  const GHSpec full = gh_marginal_params(s, {0, 1, 2});
  CHECK(full.mu == s.mu);
  CHECK(full.sigma == s.sigma);
  const GHSpec m = gh_marginal_params(s, {1});
  CHECK(m.omega == s.omega);
  CHECK(m.phi == s.phi);
  CHECK(m.lambda == s.lambda);

  GHSpec b = bivariate(0.25, 0.5, -0.45, 0.72);
  const GHSpec mb = gh_marginal_params(b, {1});
  const std::size_t N = 50000;
  std::vector<double> xs(N);
  for (auto& x : xs) x = sample_gh(b, rng)[1];
  auto f = [&](double x) { return std::exp(gh_log_density(mb, Eigen::VectorXd::Constant(1, x))); };
  const double xmin = *std::min_element(xs.begin(), xs.end());
  exp_sinh<double> es;
  const double below = es.integrate([&](double t) { return f(-t); }, -xmin, kInf, 1e-13);
  CHECK(ks_statistic(xs, f, below) < 1.628 / std::sqrt(static_cast<double>(N)));
}

TEST_CASE("residual tail dependence") {
  const double eta = residual_tail_dependence(bivariate(0.0, 0.5, -0.45, 0.72));
  CHECK(std::abs(eta - 0.93) < 0.02);
  // alpha = 0, r = 0, omega = phi = 1: beta = (1, 1), eta = 1 / sqrt(2).
  CHECK(residual_tail_dependence(bivariate(0.0, 1.0, 0.0, 0.0)) ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-14));

  Rng rng(9);
  for (int rep = 0; rep < 200; ++rep) {
    GHSpec s = bivariate(0.6 * uniform01(rng) - 0.3, 0.01 + 0.99 * uniform01(rng),
                         2.0 * uniform01(rng) - 1.0, 1.98 * uniform01(rng) - 0.99);
    s.alpha[1] = 0.6 * uniform01(rng) - 0.3;
    const double e = residual_tail_dependence(s);
    GHSpec swapped = s;
    std::swap(swapped.alpha[0], swapped.alpha[1]);
    CHECK(e > 0.0);
    CHECK(e <= 1.0 + 1e-12);
    CHECK(residual_tail_dependence(swapped) == doctest::Approx(e).epsilon(1e-12));
  }
}

TEST_CASE("GHModel simulate and row-wise conditional simulation") {
  GHModel model(GHModelSpec::preset(3, 50));
  CHECK(model.prior().dim() == 6);
  Rng rng(4);
  const std::vector<double> theta{0.1, -0.45, 0.5, 0.7, 0.6, 0.72};
  const Tensor z = model.simulate(theta, rng);
  CHECK(z.shape() == Shape{50, 3});
  auto field = apply_missingness(MissingnessModel::fixed(MissingKind::MCAR, 0.5), z, rng);
  // Whole first row missing.
  for (std::size_t i = 0; i < 3; ++i) {
    field.observed[i] = 0;
    field.values[i] = 0.0;
  }
  auto reps = model.conditional_simulate(theta, field, 4, rng);
  REQUIRE(reps.size() == 4);
  bool ok = true;
  for (const auto& r : reps) {
    CHECK(r.all_finite());
    for (std::size_t i = 0; i < r.size(); ++i) ok = ok && (!field.observed[i] || r[i] == z[i]);
  }
  CHECK(ok);
  CHECK(reps[0][0] != reps[1][0]);
  CHECK_THROWS_AS(model.simulate({0.1, -0.45, 0.5, 0.99, -0.99, 0.99}, rng), Error);
}
