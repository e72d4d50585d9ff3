#include "nbe/losses.hpp"

#include <cmath>

#include "nbe/error.hpp"

namespace nbe {

LossSpec LossSpec::tanh(double kappa) {
  LossSpec s;
  s.kind = LossKind::Tanh;
  s.kappa = kappa;
  return s;
}

LossSpec LossSpec::power(double beta, double delta) {
  LossSpec s;
  s.kind = LossKind::Power;
  s.beta = beta;
  s.delta = delta;
  return s;
}

LossSpec LossSpec::cauchy(double rho, double alpha) {
  LossSpec s;
  s.kind = LossKind::Cauchy;
  s.rho = rho;
  s.alpha = alpha;
  return s;
}

LossSpec LossSpec::quadratic() {
  LossSpec s;
  s.kind = LossKind::Quadratic;
  return s;
}

LossSpec LossSpec::absolute() {
  LossSpec s;
  s.kind = LossKind::Absolute;
  return s;
}

void LossSpec::validate() const {
  switch (kind) {
    case LossKind::Tanh:
      require(kappa > 0.0, ErrorKind::Config, "loss.kappa must be > 0");
      break;
    case LossKind::Power:
      require(beta > 0.0, ErrorKind::Config, "loss.beta must be > 0");
      require(delta >= 0.0, ErrorKind::Config, "loss.delta must be >= 0");
      break;
    case LossKind::Cauchy:
      require(rho > 0.0, ErrorKind::Config, "loss.rho must be > 0");
      require(alpha >= 1.0, ErrorKind::Config, "loss.alpha must be >= 1");
      break;
    case LossKind::Quadratic:
    case LossKind::Absolute:
      break;
  }
}

const char* loss_name(LossKind kind) {
  switch (kind) {
    case LossKind::Tanh: return "tanh";
    case LossKind::Power: return "power";
    case LossKind::Cauchy: return "cauchy";
    case LossKind::Quadratic: return "quadratic";
    case LossKind::Absolute: return "absolute";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& name) {
  for (auto k : {LossKind::Tanh, LossKind::Power, LossKind::Cauchy, LossKind::Quadratic,
                 LossKind::Absolute}) {
    if (name == loss_name(k)) return k;
  }
  if (name == "cauchy-variogram") return LossKind::Cauchy;
  fail(ErrorKind::Config, "unknown loss kind '" + name + "'");
}

double loss_distance(const LossSpec& spec, const double* truth, const double* est,
                     std::size_t p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    const double e = est[i] - truth[i];
    s += spec.norm == Norm::Euclidean ? e * e : std::abs(e);
  }
  return spec.norm == Norm::Euclidean ? std::sqrt(s) : s;
}

double loss_of_distance(const LossSpec& spec, double d) {
  switch (spec.kind) {
    case LossKind::Tanh:
      return std::tanh(d / spec.kappa);
    case LossKind::Power:
      return std::pow(d + spec.delta, spec.beta) - std::pow(spec.delta, spec.beta);
    case LossKind::Cauchy:
      return 1.0 - 1.0 / (1.0 + std::pow(d / spec.rho, spec.alpha));
    case LossKind::Quadratic:
      return d * d;
    case LossKind::Absolute:
      return d;
  }
  return 0.0;
}

double loss_slope(const LossSpec& spec, double d) {
  switch (spec.kind) {
    case LossKind::Tanh: {
      const double t = std::tanh(d / spec.kappa);
      return (1.0 - t * t) / spec.kappa;
    }
    case LossKind::Power:
      if (d + spec.delta == 0.0) {
        if (spec.beta < 1.0) return INFINITY;
        return spec.beta == 1.0 ? 1.0 : 0.0;
      }
      return spec.beta * std::pow(d + spec.delta, spec.beta - 1.0);
    case LossKind::Cauchy: {
      if (d == 0.0) return spec.alpha == 1.0 ? 1.0 / spec.rho : 0.0;
      const double u = std::pow(d / spec.rho, spec.alpha);
      return spec.alpha * u / d / ((1.0 + u) * (1.0 + u));
    }
    case LossKind::Quadratic:
      return 2.0 * d;
    case LossKind::Absolute:
      return 1.0;
  }
  return 0.0;
}

double loss(const LossSpec& spec, const double* truth, const double* est, std::size_t p) {
  return loss_of_distance(spec, loss_distance(spec, truth, est, p));
}

double loss(const LossSpec& spec, const std::vector<double>& truth,
            const std::vector<double>& est) {
  require(truth.size() == est.size(), ErrorKind::ShapeMismatch,
          "loss: dimension mismatch " + std::to_string(truth.size()) + " vs " +
              std::to_string(est.size()));
  return loss(spec, truth.data(), est.data(), truth.size());
}

void loss_gradient(const LossSpec& spec, const double* truth, const double* est,
                   std::size_t p, double* grad) {
  const double d = loss_distance(spec, truth, est, p);
  if (d == 0.0) {
    require(!(spec.kind == LossKind::Power && spec.delta == 0.0 && spec.beta < 1.0),
            ErrorKind::Numerical,
            "loss gradient diverges at the origin for power loss with delta=0, beta<1");
    for (std::size_t i = 0; i < p; ++i) grad[i] = 0.0;
    return;
  }
  const double slope = loss_slope(spec, d);
  for (std::size_t i = 0; i < p; ++i) {
    const double e = est[i] - truth[i];
    if (spec.norm == Norm::Euclidean) {
      grad[i] = slope * e / d;
    } else {
      grad[i] = slope * (e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0));
    }
  }
}

std::vector<double> loss_gradient(const LossSpec& spec, const std::vector<double>& truth,
                                  const std::vector<double>& est) {
  require(truth.size() == est.size(), ErrorKind::ShapeMismatch,
          "loss_gradient: dimension mismatch");
  std::vector<double> g(truth.size());
  loss_gradient(spec, truth.data(), est.data(), truth.size(), g.data());
  return g;
}

}  // namespace nbe
