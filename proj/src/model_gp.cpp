#include "nbe/model_gp.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "nbe/error.hpp"
#include "nbe/optim.hpp"
#include "nbe/special.hpp"

namespace nbe {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Covariance by grid offset (|di|, |dj|), nugget excluded.
struct OffsetTable {
  std::size_t w = 0;
  std::vector<double> v;
  double at(std::size_t di, std::size_t dj) const { return v[di * w + dj]; }
};

OffsetTable offset_table(const GPSpec& spec, const GPParams& p) {
  OffsetTable t;
  t.w = spec.width;
  t.v.resize(spec.height * spec.width);
  const double sy = spec.height > 1 ? 1.0 / static_cast<double>(spec.height - 1) : 0.0;
  const double sx = spec.width > 1 ? 1.0 / static_cast<double>(spec.width - 1) : 0.0;
  for (std::size_t di = 0; di < spec.height; ++di) {
    for (std::size_t dj = 0; dj < spec.width; ++dj) {
      const double d = std::hypot(di * sy, dj * sx);
      t.v[di * spec.width + dj] = matern_correlation_term(d, spec.sigma2, spec.nu, p.rho);
    }
  }
  return t;
}

std::size_t absdiff(std::size_t a, std::size_t b) { return a > b ? a - b : b - a; }

double cov_entry(const GPSpec& spec, const OffsetTable& t, double tau2, std::size_t a,
                 std::size_t b) {
  const std::size_t di = absdiff(a / spec.width, b / spec.width);
  const std::size_t dj = absdiff(a % spec.width, b % spec.width);
  return t.at(di, dj) + (a == b ? tau2 : 0.0);
}

void check_theta(const GPSpec& spec, const std::vector<double>& theta) {
  require(theta.size() == spec.prior.dim(), ErrorKind::InvalidArgument,
          "gp: expected " + std::to_string(spec.prior.dim()) + " parameters, got " +
              std::to_string(theta.size()));
  const GPParams p = gp_params(spec, theta);
  require(std::isfinite(p.rho) && p.rho > 0.0, ErrorKind::InvalidArgument,
          "gp: range rho must be > 0");
  require(std::isfinite(p.tau) && p.tau >= 0.0, ErrorKind::InvalidArgument,
          "gp: nugget tau must be >= 0");
}

void check_field(const GPSpec& spec, const IncompleteField& field) {
  field.validate();
  require(field.values.shape() == Shape{spec.height, spec.width}, ErrorKind::ShapeMismatch,
          "gp: field shape " + shape_str(field.values.shape()) + " does not match grid [" +
              std::to_string(spec.height) + ", " + std::to_string(spec.width) + "]");
}

Eigen::VectorXd standard_normals(std::size_t n, Rng& rng) {
  std::normal_distribution<double> norm(0.0, 1.0);
  Eigen::VectorXd e(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < e.size(); ++i) e[i] = norm(rng);
  return e;
}

Tensor to_field(const GPSpec& spec, const Eigen::VectorXd& z) {
  Tensor t({spec.height, spec.width});
  for (std::size_t i = 0; i < spec.n(); ++i) t[i] = z[static_cast<Eigen::Index>(i)];
  return t;
}

}  // namespace

GPSpec GPSpec::matern(std::size_t h, std::size_t w) {
  GPSpec s;
  s.height = h;
  s.width = w;
  s.prior.blocks = {PriorBlock::uniform("tau", 0.0, 1.0), PriorBlock::uniform("rho", 0.0, 0.35)};
  return s;
}

GPSpec GPSpec::exponential(std::size_t h, std::size_t w) {
  GPSpec s;
  s.height = h;
  s.width = w;
  s.nu = 0.5;
  s.free_nugget = false;
  s.fixed_tau = 0.0;
  s.prior.blocks = {PriorBlock::uniform("rho", 0.0, 0.5)};
  return s;
}

void GPSpec::validate() const {
  require(height >= 1 && width >= 1, ErrorKind::Config, "gp: grid must be nonempty");
  require(sigma2 > 0.0 && std::isfinite(sigma2), ErrorKind::Config, "gp: sigma2 must be > 0");
  require(nu > 0.0 && std::isfinite(nu), ErrorKind::Config, "gp: nu must be > 0");
  require(fixed_tau >= 0.0, ErrorKind::Config, "gp: fixed tau must be >= 0");
  prior.validate();
  require(prior.dim() == (free_nugget ? 2u : 1u), ErrorKind::Config,
          free_nugget ? "gp: prior must have two components (tau, rho)"
                      : "gp: prior must have one component (rho)");
}

GPParams gp_params(const GPSpec& spec, const std::vector<double>& theta) {
  GPParams p;
  if (spec.free_nugget) {
    require(theta.size() == 2, ErrorKind::InvalidArgument, "gp: theta must be (tau, rho)");
    p.tau = theta[0];
    p.rho = theta[1];
  } else {
    require(theta.size() == 1, ErrorKind::InvalidArgument, "gp: theta must be (rho)");
    p.tau = spec.fixed_tau;
    p.rho = theta[0];
  }
  return p;
}

double matern_correlation_term(double d, double sigma2, double nu, double rho) {
  if (d == 0.0) return sigma2;
  const double x = d / rho;
  if (x > 700.0) return 0.0;
  const double logv = (1.0 - nu) * std::log(2.0) - std::lgamma(nu) + nu * std::log(x) +
                      log_bessel_k(nu, x);
  return sigma2 * std::exp(logv);
}

double grid_distance(const GPSpec& spec, std::size_t a, std::size_t b) {
  const double sy = spec.height > 1 ? 1.0 / static_cast<double>(spec.height - 1) : 0.0;
  const double sx = spec.width > 1 ? 1.0 / static_cast<double>(spec.width - 1) : 0.0;
  const double di = static_cast<double>(absdiff(a / spec.width, b / spec.width));
  const double dj = static_cast<double>(absdiff(a % spec.width, b % spec.width));
  return std::hypot(di * sy, dj * sx);
}

Eigen::MatrixXd matern_cov_block(const GPSpec& spec, const std::vector<double>& theta,
                                 const std::vector<std::size_t>& rows,
                                 const std::vector<std::size_t>& cols) {
  check_theta(spec, theta);
  const GPParams p = gp_params(spec, theta);
  const OffsetTable t = offset_table(spec, p);
  const double tau2 = p.tau * p.tau;
  Eigen::MatrixXd m(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < spec.n(), ErrorKind::InvalidArgument, "gp: site index out of range");
    for (std::size_t j = 0; j < cols.size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          cov_entry(spec, t, tau2, rows[i], cols[j]);
    }
  }
  return m;
}

Eigen::MatrixXd matern_cov(const GPSpec& spec, const std::vector<double>& theta) {
  std::vector<std::size_t> all(spec.n());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return matern_cov_block(spec, theta, all, all);
}

Eigen::MatrixXd cholesky_jittered(const Eigen::MatrixXd& a, double scale) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  double jitter = 1e-10 * scale;
  for (int attempt = 0; attempt <= 3; ++attempt, jitter *= 10.0) {
    Eigen::MatrixXd b = a;
    b.diagonal().array() += jitter;
    llt.compute(b);
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  fail(ErrorKind::Numerical, "covariance not positive definite after jitter up to " +
                                 std::to_string(jitter / 10.0));
}

ReplicateSet simulate_gp_replicates(const GPSpec& spec, const std::vector<double>& theta,
                                    std::size_t H, Rng& rng) {
  const GPParams p = gp_params(spec, theta);
  const Eigen::MatrixXd L = cholesky_jittered(matern_cov(spec, theta), spec.sigma2 + p.tau * p.tau);
  ReplicateSet out;
  out.reserve(H);
  for (std::size_t h = 0; h < H; ++h) {
    const Eigen::VectorXd z = L.triangularView<Eigen::Lower>() * standard_normals(spec.n(), rng);
    out.push_back(to_field(spec, z));
  }
  return out;
}

Tensor simulate_gp(const GPSpec& spec, const std::vector<double>& theta, Rng& rng) {
  return simulate_gp_replicates(spec, theta, 1, rng).front();
}

KrigingResult gp_kriging(const GPSpec& spec, const std::vector<double>& theta,
                         const IncompleteField& field) {
  check_field(spec, field);
  std::vector<std::size_t> obs, mis;
  for (std::size_t i = 0; i < field.size(); ++i) (field.observed[i] ? obs : mis).push_back(i);
  require(!obs.empty(), ErrorKind::InvalidArgument,
          "gp: conditional simulation needs at least one observed site");
  const GPParams p = gp_params(spec, theta);
  const double scale = spec.sigma2 + p.tau * p.tau;

  KrigingResult r;
  r.missing = mis;
  if (mis.empty()) return r;
  const Eigen::MatrixXd L11 = cholesky_jittered(matern_cov_block(spec, theta, obs, obs), scale);
  Eigen::VectorXd z1(static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) z1[static_cast<Eigen::Index>(i)] = field.values[obs[i]];
  // A = L11^-1 S12, so S21 S11^-1 z1 = A^T L11^-1 z1 and S21 S11^-1 S12 = A^T A.
  const auto tri = L11.triangularView<Eigen::Lower>();
  const Eigen::MatrixXd A = tri.solve(matern_cov_block(spec, theta, obs, mis));
  const Eigen::VectorXd w = tri.solve(z1);
  r.mean = A.transpose() * w;
  r.cov = matern_cov_block(spec, theta, mis, mis);
  r.cov.noalias() -= A.transpose() * A;
  return r;
}

ReplicateSet conditional_simulate_gp(const GPSpec& spec, const std::vector<double>& theta,
                                     const IncompleteField& field, std::size_t H, Rng& rng) {
  const KrigingResult k = gp_kriging(spec, theta, field);
  ReplicateSet out;
  out.reserve(H);
  if (k.missing.empty()) {
    for (std::size_t h = 0; h < H; ++h) out.push_back(field.values);
    return out;
  }
  const GPParams p = gp_params(spec, theta);
  // Symmetrize against roundoff from the Schur complement.
  const Eigen::MatrixXd cov = 0.5 * (k.cov + k.cov.transpose());
  const Eigen::MatrixXd L = cholesky_jittered(cov, spec.sigma2 + p.tau * p.tau);
  for (std::size_t h = 0; h < H; ++h) {
    const Eigen::VectorXd z2 =
        k.mean + L.triangularView<Eigen::Lower>() * standard_normals(k.missing.size(), rng);
    Tensor t = field.values;
    for (std::size_t i = 0; i < k.missing.size(); ++i) {
      t[k.missing[i]] = z2[static_cast<Eigen::Index>(i)];
    }
    out.push_back(std::move(t));
  }
  return out;
}

double gp_log_posterior(const GPSpec& spec, const std::vector<double>& theta,
                        const IncompleteField& field) {
  const double ninf = -std::numeric_limits<double>::infinity();
  if (theta.size() != spec.prior.dim()) return ninf;
  for (double v : theta) {
    if (!std::isfinite(v)) return ninf;
  }
  const double lp = prior_log_density(spec.prior, theta);
  if (!std::isfinite(lp)) return ninf;
  const GPParams p = gp_params(spec, theta);
  if (!(p.rho > 0.0) || p.tau < 0.0) return ninf;
  check_field(spec, field);

  std::vector<std::size_t> obs;
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (field.observed[i]) obs.push_back(i);
  }
  if (obs.empty()) return lp;
  Eigen::MatrixXd L;
  try {
    L = cholesky_jittered(matern_cov_block(spec, theta, obs, obs), spec.sigma2 + p.tau * p.tau);
  } catch (const Error&) {
    return ninf;
  }
  Eigen::VectorXd z1(static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) z1[static_cast<Eigen::Index>(i)] = field.values[obs[i]];
  const Eigen::VectorXd w = L.triangularView<Eigen::Lower>().solve(z1);
  const double logdet = 2.0 * L.diagonal().array().log().sum();
  return lp - 0.5 * (static_cast<double>(obs.size()) * kLog2Pi + logdet + w.squaredNorm());
}

MapResult map_estimate_gp(const GPSpec& spec, const IncompleteField& field) {
  spec.validate();
  check_field(spec, field);
  const std::size_t p = spec.prior.dim();
  const std::vector<double> lo = support_lower(spec.prior), hi = support_upper(spec.prior);
  auto objective = [&](const std::vector<double>& th) {
    const double v = gp_log_posterior(spec, th, field);
    return std::isfinite(v) ? -v : std::numeric_limits<double>::infinity();
  };

  constexpr int kStarts = 5;
  MapResult best;
  best.log_posterior = -std::numeric_limits<double>::infinity();
  bool any_moved = false;
  for (int k = 0; k < kStarts; ++k) {
    std::vector<double> x0(p), step(p);
    for (std::size_t j = 0; j < p; ++j) {
      const int stratum = static_cast<int>((k * (2 * j + 1)) % kStarts);
      const double width = hi[j] - lo[j];
      x0[j] = lo[j] + (stratum + 0.5) / kStarts * width;
      step[j] = 0.1 * width;
    }
    const NelderMeadResult r = nelder_mead(objective, x0, step);
    best.evals += r.evals;
    const double f0 = objective(x0);
    if (r.f < f0 || (std::isfinite(r.f) && r.x != x0)) any_moved = true;
    if (-r.f > best.log_posterior || best.theta.empty()) {
      best.theta = r.x;
      best.log_posterior = -r.f;
      best.converged = r.converged;
    }
  }
  best.converged = best.converged && any_moved;
  return best;
}

GPModel::GPModel(GPSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

Tensor GPModel::simulate(const std::vector<double>& theta, Rng& rng) const {
  return simulate_gp(spec_, theta, rng);
}

ReplicateSet GPModel::simulate_replicates(const std::vector<double>& theta, std::size_t H,
                                          Rng& rng) const {
  return simulate_gp_replicates(spec_, theta, H, rng);
}

ReplicateSet GPModel::conditional_simulate(const std::vector<double>& theta,
                                           const IncompleteField& field, std::size_t H, Rng& rng,
                                           ChainState*) const {
  return conditional_simulate_gp(spec_, theta, field, H, rng);
}

}  // namespace nbe
