#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/quadrature/exp_sinh.hpp>

#include "doctest.h"
#include "nbe/error.hpp"
#include "nbe/model_gp.hpp"
#include "nbe/special.hpp"

using namespace nbe;

namespace {

// K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt
double bessel_k_quadrature(double nu, double x) {
  boost::math::quadrature::exp_sinh<double> integrator;
  auto f = [&](double t) {
    const double c = std::cosh(t);
    if (x * c > 745.0) return 0.0;
    return std::exp(-x * c) * std::cosh(nu * t);
  };
  return integrator.integrate(f, 0.0, std::numeric_limits<double>::infinity(), 1e-14);
}

// Matern built on the standard library Bessel function.
double matern_oracle(double d, double sigma2, double nu, double rho) {
  if (d == 0.0) return sigma2;
  const double x = d / rho;
  return sigma2 * std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(x, nu) *
         std::cyl_bessel_k(nu, x);
}

Eigen::MatrixXd dense_cov_oracle(const GPSpec& spec, double tau, double rho,
                                 const std::vector<std::size_t>& sites) {
  const std::size_t m = sites.size();
  Eigen::MatrixXd c(m, m);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b) {
      const double yi = static_cast<double>(sites[a] / spec.width) / (spec.height - 1);
      const double xi = static_cast<double>(sites[a] % spec.width) / (spec.width - 1);
      const double yj = static_cast<double>(sites[b] / spec.width) / (spec.height - 1);
      const double xj = static_cast<double>(sites[b] % spec.width) / (spec.width - 1);
      const double d = std::sqrt((yi - yj) * (yi - yj) + (xi - xj) * (xi - xj));
      c(a, b) = matern_oracle(d, spec.sigma2, spec.nu, rho) + (a == b ? tau * tau : 0.0);
    }
  }
  return c;
}

IncompleteField with_missing(const Tensor& z, const std::vector<std::size_t>& missing) {
  IncompleteField f = fully_observed(z);
  for (auto i : missing) {
    f.observed[i] = 0;
    f.values[i] = 0.0;
  }
  return f;
}

}  // namespace

TEST_CASE("bessel K matches the standard library and a quadrature oracle") {
  double worst_std = 0.0, worst_quad = 0.0;
  for (double nu : {0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.3, 4.5, -0.45, -1.45}) {
    for (double x : {1e-4, 0.05, 0.5, 1.0, 1.999, 2.0, 2.5, 7.0, 30.0, 200.0}) {
      const double k = bessel_k(nu, x);
      const double ks = std::cyl_bessel_k(std::abs(nu), x);
      worst_std = std::max(worst_std, std::abs(k - ks) / ks);
      if (x <= 30.0) {
        const double kq = bessel_k_quadrature(nu, x);
        worst_quad = std::max(worst_quad, std::abs(k - kq) / kq);
      }
    }
  }
  CHECK(worst_std < 1e-12);
  CHECK(worst_quad < 1e-10);
  CHECK(std::abs(log_bessel_k(1.0, 800.0) - std::log(bessel_k_scaled(1.0, 800.0)) + 800.0) <
        1e-12);
  CHECK(std::isfinite(log_bessel_k(0.3, 2000.0)));
  CHECK_THROWS_AS(bessel_k(1.0, 0.0), Error);
}

TEST_CASE("matern examples") {
  // d = rho, nu = 1, sigma2 = 1: (d/rho) K_1(d/rho) = K_1(1)
  const double k1 = bessel_k_quadrature(1.0, 1.0);
  CHECK(std::abs(matern_correlation_term(0.2, 1.0, 1.0, 0.2) - k1) < 1e-8);
  CHECK(std::abs(k1 - 0.601907) < 1e-6);
  for (double d : {0.01, 0.1, 0.3, 0.9}) {
    CHECK(std::abs(matern_correlation_term(d, 2.0, 0.5, 0.2) - 2.0 * std::exp(-d / 0.2)) <
          1e-12);
  }
  GPSpec spec = GPSpec::matern(4, 5);
  const Eigen::MatrixXd c = matern_cov(spec, {0.4, 0.2});
  for (Eigen::Index i = 0; i < c.rows(); ++i) CHECK(c(i, i) == doctest::Approx(1.16).epsilon(1e-14));
  CHECK((c - c.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(Eigen::LLT<Eigen::MatrixXd>(c).info() == Eigen::Success);
}

TEST_CASE("covariance agrees with an independent dense construction and is exchangeable") {
  GPSpec spec = GPSpec::matern(6, 7);
  std::vector<std::size_t> sites(spec.n());
  std::iota(sites.begin(), sites.end(), 0);
  const Eigen::MatrixXd a = matern_cov(spec, {0.3, 0.15});
  const Eigen::MatrixXd b = dense_cov_oracle(spec, 0.3, 0.15, sites);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);

  Rng rng(3);
  std::vector<std::size_t> perm = sites;
  std::shuffle(perm.begin(), perm.end(), rng);
  const Eigen::MatrixXd p = matern_cov_block(spec, {0.3, 0.15}, perm, perm);
  double worst = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t j = 0; j < perm.size(); ++j) {
      worst = std::max(worst, std::abs(p(i, j) - a(perm[i], perm[j])));
    }
  }
  CHECK(worst == 0.0);
}

TEST_CASE("cholesky jitter escalation") {
  Eigen::MatrixXd singular = Eigen::MatrixXd::Ones(3, 3);
  const Eigen::MatrixXd L = cholesky_jittered(singular, 1.0);
  CHECK(((L * L.transpose()) - singular).cwiseAbs().maxCoeff() < 1e-6);
  Eigen::MatrixXd neg = -Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(cholesky_jittered(neg, 1.0), Error);
}

TEST_CASE("simulation: marginal variance, short range independence, reproducibility") {
  GPSpec spec = GPSpec::matern(4, 4);
  Rng rng(11);
  const std::size_t N = 10000;
  auto reps = simulate_gp_replicates(spec, {0.5, 0.2}, N, rng);
  for (std::size_t site : {0u, 5u, 15u}) {
    double s = 0.0;
    for (const auto& z : reps) s += z[site] * z[site];
    CHECK(std::abs(s / N - 1.25) < 0.05 * 1.25);
  }

  auto indep = simulate_gp_replicates(spec, {0.0, 1e-4}, N, rng);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (const auto& z : indep) {
    sxy += z[0] * z[1];
    sxx += z[0] * z[0];
    syy += z[1] * z[1];
  }
  CHECK(std::abs(sxy / std::sqrt(sxx * syy)) < 0.05);

  Rng r1(5), r2(5);
  CHECK(simulate_gp(spec, {0.1, 0.3}, r1) == simulate_gp(spec, {0.1, 0.3}, r2));
  CHECK_THROWS_AS(simulate_gp(spec, {0.1, 0.0}, r1), Error);
}

TEST_CASE("conditional simulation: copies, kriging moments, observed entries exact") {
  GPSpec spec = GPSpec::matern(5, 5);
  const std::vector<double> theta{0.2, 0.25};
  Rng rng(21);
  const Tensor z = simulate_gp(spec, theta, rng);

  auto copies = conditional_simulate_gp(spec, theta, fully_observed(z), 4, rng);
  REQUIRE(copies.size() == 4);
  for (const auto& c : copies) CHECK(c == z);

  // Single missing site: analytic kriging via a dense inverse.
  const std::size_t m = 12;
  IncompleteField f = with_missing(z, {m});
  std::vector<std::size_t> obs;
  for (std::size_t i = 0; i < spec.n(); ++i) {
    if (i != m) obs.push_back(i);
  }
  std::vector<std::size_t> all = obs;
  all.push_back(m);
  const Eigen::MatrixXd C = dense_cov_oracle(spec, theta[0], theta[1], all);
  const std::size_t n1 = obs.size();
  const Eigen::MatrixXd S11 = C.topLeftCorner(n1, n1);
  const Eigen::VectorXd s12 = C.topRightCorner(n1, 1);
  Eigen::VectorXd z1(n1);
  for (std::size_t i = 0; i < n1; ++i) z1[i] = z[obs[i]];
  const Eigen::MatrixXd S11inv = S11.inverse();
  const double mean = s12.dot(S11inv * z1);
  const double var = C(n1, n1) - s12.dot(S11inv * s12);

  const std::size_t N = 10000;
  auto draws = conditional_simulate_gp(spec, theta, f, N, rng);
  double s = 0.0, ss = 0.0;
  bool observed_exact = true;
  for (const auto& d : draws) {
    s += d[m];
    for (auto i : obs) observed_exact = observed_exact && d[i] == z[i];
  }
  const double emp_mean = s / N;
  for (const auto& d : draws) ss += (d[m] - emp_mean) * (d[m] - emp_mean);
  const double emp_var = ss / (N - 1);
  CHECK(observed_exact);
  CHECK(std::abs(emp_mean - mean) < 3.0 * std::sqrt(var / N));
  CHECK(std::abs(emp_var - var) < 3.0 * var * std::sqrt(2.0 / (N - 1)));

  const KrigingResult k = gp_kriging(spec, theta, f);
  CHECK(std::abs(k.mean[0] - mean) < 1e-10);
  CHECK(std::abs(k.cov(0, 0) - var) < 1e-10);

  IncompleteField none = f;
  std::fill(none.observed.begin(), none.observed.end(), 0);
  CHECK_THROWS_AS(conditional_simulate_gp(spec, theta, none, 1, rng), Error);
}

TEST_CASE("large nugget decouples the missing site") {
  GPSpec spec = GPSpec::matern(5, 5);
  spec.prior.blocks[0] = PriorBlock::uniform("tau", 0.0, 100.0);
  Rng rng(2);
  IncompleteField f = with_missing(simulate_gp(spec, {0.1, 0.2}, rng), {7});
  const double tau = 30.0;
  const KrigingResult k = gp_kriging(spec, {tau, 0.2}, f);
  const double prior_var = 1.0 + tau * tau;
  CHECK(std::abs(k.cov(0, 0) - prior_var) / prior_var < 1e-3);
  const KrigingResult small = gp_kriging(spec, {0.05, 0.2}, f);
  CHECK(small.cov(0, 0) < 0.5 * (1.0 + 0.05 * 0.05));
}

TEST_CASE("conditional variance is monotone in the observation set") {
  GPSpec spec = GPSpec::matern(6, 6);
  const std::vector<double> theta{0.3, 0.2};
  Rng rng(8);
  const Tensor z = simulate_gp(spec, theta, rng);
  // B observes everything A observes, plus more.
  std::vector<std::size_t> missing_a, missing_b;
  for (std::size_t i = 0; i < spec.n(); ++i) {
    if (uniform01(rng) < 0.5) {
      missing_a.push_back(i);
      if (uniform01(rng) < 0.5 || i == 14) missing_b.push_back(i);
    }
  }
  if (std::find(missing_a.begin(), missing_a.end(), 14) == missing_a.end()) {
    missing_a.push_back(14);
    missing_b.push_back(14);
  }
  const KrigingResult ka = gp_kriging(spec, theta, with_missing(z, missing_a));
  const KrigingResult kb = gp_kriging(spec, theta, with_missing(z, missing_b));
  for (std::size_t j = 0; j < kb.missing.size(); ++j) {
    const auto it = std::find(ka.missing.begin(), ka.missing.end(), kb.missing[j]);
    REQUIRE(it != ka.missing.end());
    const auto ia = static_cast<Eigen::Index>(it - ka.missing.begin());
    CHECK(kb.cov(j, j) <= ka.cov(ia, ia) + 1e-12);
  }
}

TEST_CASE("log posterior examples") {
  GPSpec one = GPSpec::matern(1, 1);
  const double zv = 0.7;
  IncompleteField f = fully_observed(Tensor({1, 1}, std::vector<double>{zv}));
  // uniform prior density on (0,1) x (0,0.35): log(1/0.35)
  const double lp = std::log(1.0 / 0.35);
  const double want = -0.5 * std::log(2.0 * M_PI) - zv * zv / 2.0 + lp;
  CHECK(gp_log_posterior(one, {0.0, 0.1}, f) == doctest::Approx(want).epsilon(1e-14));
  CHECK(gp_log_posterior(one, {0.3, 0.1}, f) != gp_log_posterior(one, {0.0, 0.1}, f));
  CHECK(std::isinf(gp_log_posterior(one, {0.3, 0.5}, f)));
  CHECK(std::isinf(gp_log_posterior(one, {-0.1, 0.1}, f)));
}

TEST_CASE("log posterior matches an independent dense evaluation on a 5x5 subgrid") {
  GPSpec spec = GPSpec::matern(5, 5);
  Rng rng(31);
  for (int rep = 0; rep < 5; ++rep) {
    const std::vector<double> theta{0.05 + 0.9 * uniform01(rng), 0.02 + 0.3 * uniform01(rng)};
    IncompleteField f = apply_missingness(MissingnessModel::fixed(MissingKind::MCAR, 0.3),
                                          simulate_gp(spec, theta, rng), rng);
    std::vector<std::size_t> obs;
    for (std::size_t i = 0; i < spec.n(); ++i) {
      if (f.observed[i]) obs.push_back(i);
    }
    const Eigen::MatrixXd C = dense_cov_oracle(spec, theta[0], theta[1], obs);
    Eigen::VectorXd z1(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) z1[i] = f.values[obs[i]];
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(C);
    const double logdet = std::log(std::abs(lu.determinant()));
    const double quad = z1.dot(lu.solve(z1));
    const double want = -0.5 * (obs.size() * std::log(2.0 * M_PI) + logdet + quad) +
                        std::log(1.0 / 0.35);
    CHECK(std::abs(gp_log_posterior(spec, theta, f) - want) < 1e-8);
  }
}

TEST_CASE("numeric MAP: recovery, local optimality, determinism") {
  GPSpec spec = GPSpec::matern(16, 16);
  Rng rng(101);
  const IncompleteField f = fully_observed(simulate_gp(spec, {0.3, 0.15}, rng));
  const MapResult r = map_estimate_gp(spec, f);
  CHECK(r.converged);
  CHECK(std::abs(r.theta[0] - 0.3) < 0.1);
  CHECK(std::abs(r.theta[1] - 0.15) < 0.08);
  for (std::size_t j = 0; j < 2; ++j) {
    for (double s : {-1e-3, 1e-3}) {
      auto t = r.theta;
      t[j] += s;
      CHECK(gp_log_posterior(spec, t, f) < r.log_posterior);
    }
  }
  const MapResult again = map_estimate_gp(spec, f);
  CHECK(std::abs(again.theta[0] - r.theta[0]) < 1e-6);
  CHECK(std::abs(again.theta[1] - r.theta[1]) < 1e-6);

  GPSpec expo = GPSpec::exponential(8, 8);
  const IncompleteField fe = fully_observed(simulate_gp(expo, {0.2}, rng));
  const MapResult re = map_estimate_gp(expo, fe);
  CHECK(re.theta.size() == 1);
  CHECK(re.theta[0] > 0.0);
  CHECK(re.theta[0] < 0.5);
}

TEST_CASE("GPModel interface") {
  GPModel model(GPSpec::matern(4, 4));
  CHECK(model.field_shape() == Shape{4, 4});
  CHECK(model.prior().dim() == 2);
  Rng rng(1);
  auto reps = model.simulate_replicates({0.2, 0.1}, 3, rng);
  CHECK(reps.size() == 3);
  CHECK(reps[0].shape() == Shape{4, 4});
  CHECK_FALSE(reps[0] == reps[1]);
}
