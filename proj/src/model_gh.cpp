#include "nbe/model_gh.hpp"

#include <cmath>
#include <random>

#include "nbe/error.hpp"
#include "nbe/special.hpp"

namespace nbe {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_gig(double omega, double phi, double lambda) {
  require(std::isfinite(omega) && omega > 0.0, ErrorKind::InvalidArgument,
          "gig: omega must be > 0");
  require(std::isfinite(phi) && phi > 0.0, ErrorKind::InvalidArgument, "gig: phi must be > 0");
  require(std::isfinite(lambda), ErrorKind::InvalidArgument, "gig: lambda must be finite");
}

// Root of a decreasing-through-zero function on (lo, hi) by bisection.
template <typename F>
double bisect(F&& f, double lo, double hi, bool geometric) {
  for (int it = 0; it < 300; ++it) {
    const double mid = geometric ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (f(mid) > 0.0 ? lo : hi) = mid;
    if (hi - lo <= 1e-15 * hi) break;
  }
  return 0.5 * (lo + hi);
}

Eigen::VectorXd std_normals(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> norm(0.0, 1.0);
  Eigen::VectorXd e(n);
  for (Eigen::Index i = 0; i < n; ++i) e[i] = norm(rng);
  return e;
}

Eigen::MatrixXd chol(const Eigen::MatrixXd& s, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  require(llt.info() == Eigen::Success, ErrorKind::InvalidArgument,
          std::string(what) + ": scale matrix is not positive definite");
  return llt.matrixL();
}

Eigen::VectorXd take(const Eigen::VectorXd& v, const std::vector<std::size_t>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out[static_cast<Eigen::Index>(i)] = v[static_cast<Eigen::Index>(idx[i])];
  }
  return out;
}

Eigen::MatrixXd take(const Eigen::MatrixXd& m, const std::vector<std::size_t>& r,
                     const std::vector<std::size_t>& c) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(c.size()));
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (std::size_t j = 0; j < c.size(); ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          m(static_cast<Eigen::Index>(r[i]), static_cast<Eigen::Index>(c[j]));
    }
  }
  return out;
}

// Draws from an NMVM given a prepared mixing sampler and Cholesky factor.
Eigen::VectorXd draw_nmvm(const GHSpec& s, const GigSampler& gig, const Eigen::MatrixXd& L,
                          Rng& rng) {
  const double m = gig(rng);
  return s.mu + m * s.alpha + std::sqrt(m) * (L * std_normals(L.rows(), rng));
}

}  // namespace

double gig_log_density(double m, double omega, double phi, double lambda) {
  require(m > 0.0, ErrorKind::InvalidArgument, "gig: density needs m > 0");
  check_gig(omega, phi, lambda);
  const double r = m / phi;
  return (lambda - 1.0) * std::log(r) - std::log(2.0 * phi) - log_bessel_k(lambda, omega) -
         0.5 * omega * (1.0 / r + r);
}

double gig_density(double m, double omega, double phi, double lambda) {
  return std::exp(gig_log_density(m, omega, phi, lambda));
}

double gig_mean(double omega, double phi, double lambda) {
  check_gig(omega, phi, lambda);
  return phi * std::exp(log_bessel_k(lambda + 1.0, omega) - log_bessel_k(lambda, omega));
}

GigSampler::GigSampler(double omega, double phi, double lambda)
    : phi_(phi), reciprocal_(lambda < 0.0), a_(std::abs(lambda) - 1.0), omega_(omega) {
  check_gig(omega, phi, lambda);
  mode_ = (a_ + std::sqrt(a_ * a_ + omega_ * omega_)) / omega_;
  log_f_mode_ = log_f(mode_);
  // Extremes of (x - m) sqrt(f(x)) on either side of the mode.
  auto dlog = [&](double x) {
    return 1.0 / (x - mode_) + 0.5 * (a_ / x - 0.5 * omega_ * (1.0 - 1.0 / (x * x)));
  };
  const double xlo = bisect(dlog, mode_ * 1e-12, mode_, true);
  double hi = 2.0 * mode_ + 1.0;
  while (dlog(hi) > 0.0) hi *= 2.0;
  const double xhi = bisect(dlog, mode_, hi, false);
  vmin_ = (xlo - mode_) * std::exp(0.5 * (log_f(xlo) - log_f_mode_));
  vmax_ = (xhi - mode_) * std::exp(0.5 * (log_f(xhi) - log_f_mode_));
}

double GigSampler::log_f(double x) const {
  return a_ * std::log(x) - 0.5 * omega_ * (x + 1.0 / x);
}

double GigSampler::operator()(Rng& rng) const {
  for (;;) {
    const double u = uniform_open01(rng);
    const double v = vmin_ + (vmax_ - vmin_) * uniform01(rng);
    const double x = v / u + mode_;
    if (x <= 0.0) continue;
    if (2.0 * std::log(u) <= log_f(x) - log_f_mode_) {
      return phi_ * (reciprocal_ ? 1.0 / x : x);
    }
  }
}

double sample_gig(double omega, double phi, double lambda, Rng& rng) {
  return GigSampler(omega, phi, lambda)(rng);
}

void GHSpec::validate() const {
  const Eigen::Index n = mu.size();
  require(n >= 1, ErrorKind::InvalidArgument, "gh: dimension must be >= 1");
  require(alpha.size() == n && sigma.rows() == n && sigma.cols() == n,
          ErrorKind::InvalidArgument, "gh: mu, alpha and Sigma dimensions disagree");
  require(mu.allFinite() && alpha.allFinite() && sigma.allFinite(), ErrorKind::InvalidArgument,
          "gh: non-finite parameter");
  require((sigma - sigma.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * sigma.cwiseAbs().maxCoeff(),
          ErrorKind::InvalidArgument, "gh: Sigma must be symmetric");
  check_gig(omega, phi, lambda);
  chol(sigma, "gh");
}

Eigen::VectorXd sample_gh(const GHSpec& spec, Rng& rng) {
  spec.validate();
  return draw_nmvm(spec, GigSampler(spec.omega, spec.phi, spec.lambda), chol(spec.sigma, "gh"),
                   rng);
}

double gh_log_density(const GHSpec& spec, const Eigen::VectorXd& z) {
  spec.validate();
  require(z.size() == spec.mu.size(), ErrorKind::ShapeMismatch,
          "gh: point dimension does not match the spec");
  const double n = static_cast<double>(spec.dim());
  const Eigen::MatrixXd L = chol(spec.sigma, "gh");
  const auto tri = L.triangularView<Eigen::Lower>();
  const Eigen::VectorXd r = tri.solve(z - spec.mu);
  const Eigen::VectorXd s = tri.solve(spec.alpha);
  const double Q = r.squaredNorm(), A = s.squaredNorm(), B = r.dot(s);
  const double logdet = 2.0 * L.diagonal().array().log().sum();
  const double a = Q + spec.omega * spec.phi;
  const double b = A + spec.omega / spec.phi;
  const double p = spec.lambda - n / 2.0;
  return -0.5 * n * kLog2Pi - 0.5 * logdet + B - spec.lambda * std::log(spec.phi) -
         log_bessel_k(spec.lambda, spec.omega) + 0.5 * p * (std::log(a) - std::log(b)) +
         log_bessel_k(p, std::sqrt(a * b));
}

GHSpec gh_conditional_params(const GHSpec& spec, const std::vector<std::size_t>& observed,
                             const Eigen::VectorXd& z1) {
  spec.validate();
  const std::size_t n = spec.dim();
  std::vector<std::uint8_t> is_obs(n, 0);
  for (auto i : observed) {
    require(i < n && !is_obs[i], ErrorKind::InvalidArgument,
            "gh: observed indices must be distinct and in range");
    is_obs[i] = 1;
  }
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_obs[i]) rest.push_back(i);
  }
  require(!observed.empty() && !rest.empty(), ErrorKind::InvalidArgument,
          "gh: conditioning needs a nonempty proper subset");
  require(z1.size() == static_cast<Eigen::Index>(observed.size()), ErrorKind::ShapeMismatch,
          "gh: z1 length does not match the observed index set");

  const Eigen::MatrixXd S11 = take(spec.sigma, observed, observed);
  const Eigen::MatrixXd S21 = take(spec.sigma, rest, observed);
  Eigen::LLT<Eigen::MatrixXd> llt(S11);
  require(llt.info() == Eigen::Success, ErrorKind::InvalidArgument, "gh: Sigma_11 is singular");
  const Eigen::VectorXd d1 = z1 - take(spec.mu, observed);
  const Eigen::VectorXd a1 = take(spec.alpha, observed);
  const Eigen::VectorXd w_d = llt.solve(d1);
  const Eigen::VectorXd w_a = llt.solve(a1);

  GHSpec out;
  out.mu = take(spec.mu, rest) + S21 * w_d;
  out.alpha = take(spec.alpha, rest) - S21 * w_a;
  out.sigma = take(spec.sigma, rest, rest) - S21 * llt.solve(S21.transpose());
  out.sigma = 0.5 * (out.sigma + out.sigma.transpose());
  const double a = spec.omega * spec.phi + d1.dot(w_d);
  const double b = spec.omega / spec.phi + a1.dot(w_a);
  out.omega = std::sqrt(a * b);
  out.phi = std::sqrt(a / b);
  out.lambda = spec.lambda - static_cast<double>(observed.size()) / 2.0;
  return out;
}

GHSpec gh_marginal_params(const GHSpec& spec, const std::vector<std::size_t>& subset) {
  spec.validate();
  require(!subset.empty(), ErrorKind::InvalidArgument, "gh: marginal subset must be nonempty");
  for (auto i : subset) {
    require(i < spec.dim(), ErrorKind::InvalidArgument, "gh: marginal index out of range");
  }
  GHSpec out = spec;
  out.mu = take(spec.mu, subset);
  out.alpha = take(spec.alpha, subset);
  out.sigma = take(spec.sigma, subset, subset);
  return out;
}

double residual_tail_dependence(const GHSpec& spec) {
  spec.validate();
  require(spec.dim() == 2, ErrorKind::InvalidArgument, "gh: eta needs a bivariate spec");
  const double w = spec.omega, phi = spec.phi;
  Eigen::Vector2d beta;
  for (int i = 0; i < 2; ++i) {
    const double a = spec.alpha[i];
    beta[i] = phi * (a + std::sqrt(w / phi + a * a)) / w;
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(spec.sigma);
  const Eigen::VectorXd si_alpha = llt.solve(spec.alpha);
  const Eigen::VectorXd si_beta = llt.solve(Eigen::VectorXd(beta));
  const double root = std::sqrt((w / phi + spec.alpha.dot(si_alpha)) * beta.dot(si_beta));
  return 1.0 / (root - beta.dot(si_alpha));
}

GHModelSpec GHModelSpec::preset(std::size_t dim, std::size_t rows) {
  GHModelSpec s;
  s.dim = dim;
  s.rows = rows;
  s.prior.blocks = {PriorBlock::uniform("alpha", -0.3, 0.3),
                    PriorBlock::uniform("lambda", -1.0, 1.0),
                    PriorBlock::uniform("omega", 0.0, 1.0), PriorBlock::lkj("sigma", dim, 1.0)};
  return s;
}

void GHModelSpec::validate() const {
  require(dim >= 2, ErrorKind::Config, "gh: dimension must be >= 2");
  require(rows >= 1, ErrorKind::Config, "gh: rows must be >= 1");
  prior.validate();
  require(prior.dim() == 3 + dim * (dim - 1) / 2, ErrorKind::Config,
          "gh: prior must cover (alpha, lambda, omega) and the correlation entries");
}

GHSpec gh_spec_from_theta(const GHModelSpec& spec, const std::vector<double>& theta) {
  const std::size_t n = spec.dim;
  require(theta.size() == 3 + n * (n - 1) / 2, ErrorKind::InvalidArgument,
          "gh: theta must be (alpha, lambda, omega, correlations)");
  GHSpec s;
  s.mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  s.alpha = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), theta[0]);
  s.lambda = theta[1];
  s.omega = theta[2];
  s.phi = 1.0;
  s.sigma = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::size_t k = 3;
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j, ++k) {
      s.sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = theta[k];
      s.sigma(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = theta[k];
    }
  }
  s.validate();
  return s;
}

GHModel::GHModel(GHModelSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

Tensor GHModel::simulate(const std::vector<double>& theta, Rng& rng) const {
  const GHSpec s = gh_spec_from_theta(spec_, theta);
  const GigSampler gig(s.omega, s.phi, s.lambda);
  const Eigen::MatrixXd L = chol(s.sigma, "gh");
  Tensor out({spec_.rows, spec_.dim});
  for (std::size_t t = 0; t < spec_.rows; ++t) {
    const Eigen::VectorXd z = draw_nmvm(s, gig, L, rng);
    for (std::size_t i = 0; i < spec_.dim; ++i) out[t * spec_.dim + i] = z[static_cast<Eigen::Index>(i)];
  }
  return out;
}

ReplicateSet GHModel::conditional_simulate(const std::vector<double>& theta,
                                           const IncompleteField& field, std::size_t H, Rng& rng,
                                           ChainState*) const {
  field.validate();
  require(field.values.shape() == field_shape(), ErrorKind::ShapeMismatch,
          "gh: field shape " + shape_str(field.values.shape()) + " does not match " +
              shape_str(field_shape()));
  require(field.observed_count() >= 1, ErrorKind::InvalidArgument,
          "gh: conditional simulation needs at least one observed entry");
  const GHSpec s = gh_spec_from_theta(spec_, theta);
  const std::size_t n = spec_.dim;
  ReplicateSet out(H, field.values);

  const GigSampler marginal_gig(s.omega, s.phi, s.lambda);
  const Eigen::MatrixXd marginal_L = chol(s.sigma, "gh");
  for (std::size_t t = 0; t < spec_.rows; ++t) {
    std::vector<std::size_t> obs, rest;
    for (std::size_t i = 0; i < n; ++i) (field.observed[t * n + i] ? obs : rest).push_back(i);
    if (rest.empty()) continue;
    if (obs.empty()) {
      for (auto& rep : out) {
        const Eigen::VectorXd z = draw_nmvm(s, marginal_gig, marginal_L, rng);
        for (std::size_t i = 0; i < n; ++i) rep[t * n + i] = z[static_cast<Eigen::Index>(i)];
      }
      continue;
    }
    Eigen::VectorXd z1(static_cast<Eigen::Index>(obs.size()));
    for (std::size_t i = 0; i < obs.size(); ++i) {
      z1[static_cast<Eigen::Index>(i)] = field.values[t * n + obs[i]];
    }
    const GHSpec c = gh_conditional_params(s, obs, z1);
    const GigSampler gig(c.omega, c.phi, c.lambda);
    const Eigen::MatrixXd L = chol(c.sigma, "gh conditional");
    for (auto& rep : out) {
      const Eigen::VectorXd z2 = draw_nmvm(c, gig, L, rng);
      for (std::size_t i = 0; i < rest.size(); ++i) {
        rep[t * n + rest[i]] = z2[static_cast<Eigen::Index>(i)];
      }
    }
  }
  return out;
}

}  // namespace nbe
