#include "nbe/priors.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <boost/math/special_functions/erf.hpp>

#include "nbe/error.hpp"

namespace nbe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double lbeta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double gamma_draw(double shape, Rng& rng) {
  std::gamma_distribution<double> g(shape, 1.0);
  return g(rng);
}

double beta_draw(double a, double b, Rng& rng) {
  const double x = gamma_draw(a, rng);
  const double y = gamma_draw(b, rng);
  return x / (x + y);
}

double truncgauss_draw(double mu, double sigma, double lo, double hi, Rng& rng) {
  const double a = (lo - mu) / sigma;
  const double b = (hi - mu) / sigma;
  // Work in the lower tail for numerical range.
  if (a > 0.0) return mu - sigma * truncgauss_draw(0.0, 1.0, -b, -a, rng);
  const double pa = norm_cdf(a);
  const double pb = norm_cdf(b);
  if (pb - pa > 0.25) {
    std::normal_distribution<double> nd;
    for (;;) {
      const double z = nd(rng);
      if (z >= a && z <= b) return mu + sigma * z;
    }
  }
  const double u = pa + (pb - pa) * uniform_open01(rng);
  const double z = -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * u);
  return mu + sigma * std::min(std::max(z, a), b);
}

double truncgauss_log_mass(double mu, double sigma, double lo, double hi) {
  const double a = (lo - mu) / sigma;
  const double b = (hi - mu) / sigma;
  if (a > 0.0) return std::log(norm_cdf(-a) - norm_cdf(-b));
  return std::log(norm_cdf(b) - norm_cdf(a));
}

}  // namespace

const char* family_name(PriorFamily f) {
  switch (f) {
    case PriorFamily::Uniform: return "uniform";
    case PriorFamily::Beta: return "beta";
    case PriorFamily::TruncGauss: return "truncgauss";
    case PriorFamily::Gamma: return "gamma";
    case PriorFamily::Pareto: return "pareto";
    case PriorFamily::InvGamma: return "invgamma";
    case PriorFamily::Lkj: return "lkj";
  }
  return "?";
}

PriorFamily parse_family(const std::string& name) {
  for (auto f : {PriorFamily::Uniform, PriorFamily::Beta, PriorFamily::TruncGauss,
                 PriorFamily::Gamma, PriorFamily::Pareto, PriorFamily::InvGamma,
                 PriorFamily::Lkj}) {
    if (name == family_name(f)) return f;
  }
  fail(ErrorKind::Config, "unknown prior family '" + name + "'");
}

PriorBlock PriorBlock::uniform(std::string name, double lo, double hi) {
  return {PriorFamily::Uniform, lo, hi, lo, hi, 1, std::move(name)};
}
PriorBlock PriorBlock::beta(std::string name, double a, double b) {
  return {PriorFamily::Beta, a, b, 0.0, 1.0, 1, std::move(name)};
}
PriorBlock PriorBlock::truncgauss(std::string name, double mu, double sigma, double lo,
                                  double hi) {
  return {PriorFamily::TruncGauss, mu, sigma, lo, hi, 1, std::move(name)};
}
PriorBlock PriorBlock::gamma(std::string name, double shape, double rate) {
  return {PriorFamily::Gamma, shape, rate, 0.0, kInf, 1, std::move(name)};
}
PriorBlock PriorBlock::pareto(std::string name, double scale, double shape) {
  return {PriorFamily::Pareto, scale, shape, scale, kInf, 1, std::move(name)};
}
PriorBlock PriorBlock::invgamma(std::string name, double shape, double rate) {
  return {PriorFamily::InvGamma, shape, rate, 0.0, kInf, 1, std::move(name)};
}
PriorBlock PriorBlock::lkj(std::string name, std::size_t dim, double eta) {
  return {PriorFamily::Lkj, eta, 0.0, -1.0, 1.0, dim, std::move(name)};
}

std::size_t PriorBlock::width() const {
  return family == PriorFamily::Lkj ? dim * (dim - 1) / 2 : 1;
}

void PriorBlock::validate() const {
  const std::string where = "prior '" + name + "' (" + family_name(family) + ")";
  auto need = [&](bool ok, const std::string& what) {
    require(ok, ErrorKind::Config, where + ": " + what);
  };
  auto finite = [](double v) { return std::isfinite(v); };
  switch (family) {
    case PriorFamily::Uniform:
      need(finite(a) && finite(b) && a <= b, "needs finite lo <= hi");
      break;
    case PriorFamily::Beta:
      need(a > 0.0 && b > 0.0 && finite(a) && finite(b), "shape parameters must be > 0");
      break;
    case PriorFamily::TruncGauss:
      need(finite(a) && b > 0.0 && finite(b), "needs finite mu and sigma > 0");
      need(lo < hi, "needs lo < hi");
      break;
    case PriorFamily::Gamma:
    case PriorFamily::InvGamma:
      need(a > 0.0 && b > 0.0 && finite(a) && finite(b), "shape and rate must be > 0");
      break;
    case PriorFamily::Pareto:
      need(a > 0.0 && b > 0.0 && finite(a) && finite(b), "scale and shape must be > 0");
      break;
    case PriorFamily::Lkj:
      need(dim >= 2, "correlation dimension must be >= 2");
      need(a > 0.0 && finite(a), "eta must be > 0");
      break;
  }
}

double PriorBlock::lower() const {
  switch (family) {
    case PriorFamily::Uniform: return a;
    case PriorFamily::Beta: return 0.0;
    case PriorFamily::TruncGauss: return lo;
    case PriorFamily::Gamma:
    case PriorFamily::InvGamma: return 0.0;
    case PriorFamily::Pareto: return a;
    case PriorFamily::Lkj: return -1.0;
  }
  return -kInf;
}

double PriorBlock::upper() const {
  switch (family) {
    case PriorFamily::Uniform: return b;
    case PriorFamily::Beta: return 1.0;
    case PriorFamily::TruncGauss: return hi;
    case PriorFamily::Lkj: return 1.0;
    default: return kInf;
  }
}

namespace {

// log det of a correlation matrix via Cholesky; -inf if not PD.
double corr_log_det(const std::vector<double>& R, std::size_t d) {
  std::vector<double> L(d * d, 0.0);
  double ld = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = R[i * d + j];
      for (std::size_t k = 0; k < j; ++k) s -= L[i * d + k] * L[j * d + k];
      if (i == j) {
        if (!(s > 0.0)) return -kInf;
        L[i * d + i] = std::sqrt(s);
        ld += std::log(s);
      } else {
        L[i * d + j] = s / L[j * d + j];
      }
    }
  }
  return ld;
}

// log normalizing constant of LKJ(eta) in dimension d.
double lkj_log_norm(std::size_t d, double eta) {
  // c = sum_{k=1}^{d-1} [(2 eta - 2 + d - k)(d - k) log 2
  //      + (d - k) lbeta(eta + (d-k-1)/2, eta + (d-k-1)/2)]
  double c = 0.0;
  for (std::size_t k = 1; k < d; ++k) {
    const double dk = static_cast<double>(d - k);
    const double bb = eta + (dk - 1.0) / 2.0;
    c += (2.0 * eta - 2.0 + dk) * dk * std::log(2.0) + dk * lbeta(bb, bb);
  }
  return c;
}

}  // namespace

double PriorBlock::log_density(const double* xp) const {
  const double x = xp[0];
  switch (family) {
    case PriorFamily::Uniform:
      if (x < a || x > b) return -kInf;
      return b > a ? -std::log(b - a) : 0.0;
    case PriorFamily::Beta:
      if (x < 0.0 || x > 1.0) return -kInf;
      return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - lbeta(a, b);
    case PriorFamily::TruncGauss: {
      if (x < lo || x > hi) return -kInf;
      const double z = (x - a) / b;
      return -0.5 * z * z - kLogSqrt2Pi - std::log(b) - truncgauss_log_mass(a, b, lo, hi);
    }
    case PriorFamily::Gamma:
      if (x <= 0.0) return -kInf;
      return a * std::log(b) - std::lgamma(a) + (a - 1.0) * std::log(x) - b * x;
    case PriorFamily::InvGamma:
      if (x <= 0.0) return -kInf;
      return a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x) - b / x;
    case PriorFamily::Pareto:
      if (x < a) return -kInf;
      return std::log(b) + b * std::log(a) - (b + 1.0) * std::log(x);
    case PriorFamily::Lkj: {
      std::vector<double> R(dim * dim, 0.0);
      std::size_t idx = 0;
      for (std::size_t i = 0; i < dim; ++i) {
        R[i * dim + i] = 1.0;
        for (std::size_t j = 0; j < i; ++j) R[i * dim + j] = R[j * dim + i] = xp[idx++];
      }
      const double ld = corr_log_det(R, dim);
      if (!std::isfinite(ld)) return -kInf;
      return (a - 1.0) * ld - lkj_log_norm(dim, a);
    }
  }
  return -kInf;
}

std::size_t PriorSpec::dim() const {
  std::size_t d = 0;
  for (const auto& b : blocks) d += b.width();
  return d;
}

void PriorSpec::validate() const {
  require(!blocks.empty(), ErrorKind::Config, "prior has no blocks");
  for (const auto& b : blocks) b.validate();
}

std::vector<std::string> PriorSpec::names() const {
  std::vector<std::string> out;
  for (const auto& b : blocks) {
    if (b.family == PriorFamily::Lkj) {
      for (std::size_t i = 1; i < b.dim; ++i)
        for (std::size_t j = 0; j < i; ++j)
          out.push_back(b.name + "[" + std::to_string(i) + "," + std::to_string(j) + "]");
    } else {
      out.push_back(b.name);
    }
  }
  return out;
}

std::string PriorSpec::render() const {
  std::string s;
  for (const auto& b : blocks) {
    if (!s.empty()) s += ";";
    s += b.name + "~" + family_name(b.family) + "(";
    switch (b.family) {
      case PriorFamily::TruncGauss:
        s += num(b.a) + "," + num(b.b) + "," + num(b.lo) + "," + num(b.hi);
        break;
      case PriorFamily::Lkj:
        s += std::to_string(b.dim) + "," + num(b.a);
        break;
      default:
        s += num(b.a) + "," + num(b.b);
    }
    s += ")";
  }
  return s;
}

std::vector<double> sample_lkj(std::size_t d, double eta, Rng& rng) {
  require(d >= 2 && eta > 0.0, ErrorKind::InvalidArgument, "sample_lkj: need d>=2, eta>0");
  std::vector<double> R(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) R[i * d + i] = 1.0;
  double beta = eta + (static_cast<double>(d) - 2.0) / 2.0;
  const double r12 = 2.0 * beta_draw(beta, beta, rng) - 1.0;
  R[1] = R[d] = r12;
  std::normal_distribution<double> nd;
  std::vector<double> L, w;
  for (std::size_t k = 2; k < d; ++k) {
    beta -= 0.5;
    const double y = beta_draw(static_cast<double>(k) / 2.0, beta, rng);
    w.assign(k, 0.0);
    double nrm = 0.0;
    for (auto& v : w) {
      v = nd(rng);
      nrm += v * v;
    }
    nrm = std::sqrt(nrm);
    for (auto& v : w) v *= std::sqrt(y) / nrm;
    // Cholesky of the leading k x k block.
    L.assign(k * k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double s = R[i * d + j];
        for (std::size_t m = 0; m < j; ++m) s -= L[i * k + m] * L[j * k + m];
        L[i * k + j] = i == j ? std::sqrt(std::max(s, 0.0)) : s / L[j * k + j];
      }
    }
    for (std::size_t i = 0; i < k; ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) z += L[i * k + j] * w[j];
      R[k * d + i] = R[i * d + k] = z;
    }
  }
  return R;
}

std::vector<double> sample_prior(const PriorSpec& spec, Rng& rng) {
  std::vector<double> theta;
  theta.reserve(spec.dim());
  for (const auto& b : spec.blocks) {
    switch (b.family) {
      case PriorFamily::Uniform:
        theta.push_back(b.a == b.b ? b.a : b.a + (b.b - b.a) * uniform01(rng));
        break;
      case PriorFamily::Beta:
        theta.push_back(beta_draw(b.a, b.b, rng));
        break;
      case PriorFamily::TruncGauss:
        theta.push_back(truncgauss_draw(b.a, b.b, b.lo, b.hi, rng));
        break;
      case PriorFamily::Gamma:
        theta.push_back(gamma_draw(b.a, rng) / b.b);
        break;
      case PriorFamily::InvGamma:
        theta.push_back(b.b / gamma_draw(b.a, rng));
        break;
      case PriorFamily::Pareto:
        theta.push_back(b.a * std::pow(uniform_open01(rng), -1.0 / b.b));
        break;
      case PriorFamily::Lkj: {
        const auto R = sample_lkj(b.dim, b.a, rng);
        for (std::size_t i = 1; i < b.dim; ++i)
          for (std::size_t j = 0; j < i; ++j) theta.push_back(R[i * b.dim + j]);
        break;
      }
    }
  }
  return theta;
}

PriorBlock power_block(const PriorBlock& block, int H) {
  require(H >= 1, ErrorKind::InvalidArgument, "power_prior: H must be >= 1");
  block.validate();
  const double h = H;
  PriorBlock out = block;
  switch (block.family) {
    case PriorFamily::Uniform:
      break;
    case PriorFamily::Beta:
      out.a = h * (block.a - 1.0) + 1.0;
      out.b = h * (block.b - 1.0) + 1.0;
      break;
    case PriorFamily::TruncGauss:
      out.b = block.b / std::sqrt(h);
      break;
    case PriorFamily::Gamma:
      out.a = h * (block.a - 1.0) + 1.0;
      out.b = h * block.b;
      break;
    case PriorFamily::InvGamma:
      out.a = h * (block.a + 1.0) - 1.0;
      out.b = h * block.b;
      break;
    case PriorFamily::Pareto:
      // x^{-H(alpha+1)} on [scale, inf)
      out.b = h * (block.b + 1.0) - 1.0;
      break;
    case PriorFamily::Lkj:
      out.a = h * (block.a - 1.0) + 1.0;
      break;
  }
  try {
    out.validate();
  } catch (const Error& e) {
    fail(ErrorKind::InvalidArgument, std::string("power_prior: H=") + std::to_string(H) +
                                         " leaves no proper density: " + e.what());
  }
  return out;
}

PriorSpec power_prior(const PriorSpec& spec, int H) {
  PriorSpec out;
  for (const auto& b : spec.blocks) out.blocks.push_back(power_block(b, H));
  return out;
}

double prior_log_density(const PriorSpec& spec, const std::vector<double>& theta) {
  require(theta.size() == spec.dim(), ErrorKind::ShapeMismatch,
          "prior_log_density: expected " + std::to_string(spec.dim()) + " parameters");
  double lp = 0.0;
  std::size_t off = 0;
  for (const auto& b : spec.blocks) {
    lp += b.log_density(theta.data() + off);
    off += b.width();
  }
  return lp;
}

bool in_support(const PriorSpec& spec, const std::vector<double>& theta) {
  if (theta.size() != spec.dim()) return false;
  std::size_t off = 0;
  for (const auto& b : spec.blocks) {
    if (b.family == PriorFamily::Lkj) {
      if (!std::isfinite(b.log_density(theta.data() + off))) return false;
    } else {
      const double x = theta[off];
      if (!(x >= b.lower() && x <= b.upper())) return false;
    }
    off += b.width();
  }
  return true;
}

std::vector<double> prior_mean(const PriorSpec& spec) {
  std::vector<double> m;
  for (const auto& b : spec.blocks) {
    switch (b.family) {
      case PriorFamily::Uniform:
        m.push_back(0.5 * (b.a + b.b));
        break;
      case PriorFamily::Beta:
        m.push_back(b.a / (b.a + b.b));
        break;
      case PriorFamily::TruncGauss: {
        const double al = (b.lo - b.a) / b.b;
        const double be = (b.hi - b.a) / b.b;
        auto pdf = [](double z) {
          return std::isfinite(z) ? std::exp(-0.5 * z * z - kLogSqrt2Pi) : 0.0;
        };
        const double mass = std::exp(truncgauss_log_mass(b.a, b.b, b.lo, b.hi));
        m.push_back(b.a + b.b * (pdf(al) - pdf(be)) / mass);
        break;
      }
      case PriorFamily::Gamma:
        m.push_back(b.a / b.b);
        break;
      case PriorFamily::InvGamma:
        require(b.a > 1.0, ErrorKind::Config,
                "prior '" + b.name + "': inverse-gamma mean needs shape > 1");
        m.push_back(b.b / (b.a - 1.0));
        break;
      case PriorFamily::Pareto:
        require(b.b > 1.0, ErrorKind::Config,
                "prior '" + b.name + "': Pareto mean needs shape > 1");
        m.push_back(b.b * b.a / (b.b - 1.0));
        break;
      case PriorFamily::Lkj:
        for (std::size_t i = 0; i < b.width(); ++i) m.push_back(0.0);
        break;
    }
  }
  return m;
}

std::vector<double> support_lower(const PriorSpec& spec) {
  std::vector<double> v;
  for (const auto& b : spec.blocks)
    for (std::size_t i = 0; i < b.width(); ++i) v.push_back(b.lower());
  return v;
}

std::vector<double> support_upper(const PriorSpec& spec) {
  std::vector<double> v;
  for (const auto& b : spec.blocks)
    for (std::size_t i = 0; i < b.width(); ++i) v.push_back(b.upper());
  return v;
}

std::vector<HeadSegment> head_for_prior(const PriorSpec& spec) {
  std::vector<HeadSegment> segs;
  for (const auto& b : spec.blocks) {
    HeadSegment s;
    if (b.family == PriorFamily::Lkj) {
      s.kind = HeadKind::Correlation;
      s.dim = b.dim;
    } else if (std::isfinite(b.lower()) && std::isfinite(b.upper())) {
      if (b.upper() > b.lower()) {
        s.kind = HeadKind::Bounded;
        s.lo = b.lower();
        s.hi = b.upper();
      } else {
        s.kind = HeadKind::Identity;
      }
    } else if (std::isfinite(b.lower())) {
      s.kind = HeadKind::Softplus;
      s.lo = b.lower();
    } else {
      s.kind = HeadKind::Identity;
    }
    segs.push_back(s);
  }
  return segs;
}

}  // namespace nbe
