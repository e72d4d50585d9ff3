#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "nbe/model.hpp"

namespace nbe {

/// log f_GIG(m; omega, phi, lambda) with
/// f = (m/phi)^(lambda-1) / (2 phi K_lambda(omega)) exp(-omega/2 (phi/m + m/phi)).
double gig_log_density(double m, double omega, double phi, double lambda);
double gig_density(double m, double omega, double phi, double lambda);
/// E[M] = phi K_{lambda+1}(omega) / K_lambda(omega).
double gig_mean(double omega, double phi, double lambda);

/// Ratio-of-uniforms sampler with mode shift; the bounding rectangle is
/// computed once per parameter set.
class GigSampler {
 public:
  GigSampler(double omega, double phi, double lambda);
  double operator()(Rng& rng) const;

 private:
  double phi_;
  bool reciprocal_;  // lambda < 0: sample lambda' = -lambda and invert
  double a_;         // |lambda| - 1
  double omega_;
  double mode_;
  double log_f_mode_;
  double vmin_, vmax_;
  double log_f(double x) const;  // unnormalized, standard form
};

double sample_gig(double omega, double phi, double lambda, Rng& rng);

/// Normal mean-variance mixture Z = mu + M alpha + sqrt(M) V, V ~ N(0, Sigma),
/// M ~ GIG(omega, phi, lambda).
struct GHSpec {
  Eigen::VectorXd mu;
  Eigen::VectorXd alpha;
  Eigen::MatrixXd sigma;
  double omega = 1.0;
  double phi = 1.0;
  double lambda = 0.0;

  std::size_t dim() const { return static_cast<std::size_t>(mu.size()); }
  void validate() const;
};

Eigen::VectorXd sample_gh(const GHSpec& spec, Rng& rng);
double gh_log_density(const GHSpec& spec, const Eigen::VectorXd& z);

/// Law of Z2 | Z1 = z1 where `observed` lists the indices of Z1 (any order);
/// the result is over the remaining indices in increasing order.
GHSpec gh_conditional_params(const GHSpec& spec, const std::vector<std::size_t>& observed,
                             const Eigen::VectorXd& z1);
GHSpec gh_marginal_params(const GHSpec& spec, const std::vector<std::size_t>& subset);

/// Residual-tail-dependence coefficient of a bivariate spec.
double residual_tail_dependence(const GHSpec& spec);

/// Trivariate-style preset: mu = 0, alpha = a 1, unit-diagonal Sigma, phi = 1;
/// theta = (alpha, lambda, omega, Sigma_21, Sigma_31, Sigma_32, ...).
/// A field holds T i.i.d. vectors as a [T, n] tensor.
struct GHModelSpec {
  std::size_t dim = 3;
  std::size_t rows = 200;  // T
  PriorSpec prior;

  static GHModelSpec preset(std::size_t dim, std::size_t rows);
  void validate() const;
};

GHSpec gh_spec_from_theta(const GHModelSpec& spec, const std::vector<double>& theta);

class GHModel final : public DataModel {
 public:
  explicit GHModel(GHModelSpec spec);

  std::string name() const override { return "gh"; }
  Shape field_shape() const override { return {spec_.rows, spec_.dim}; }
  bool iid_rows() const override { return true; }
  const PriorSpec& prior() const override { return spec_.prior; }
  const GHModelSpec& spec() const { return spec_; }

  Tensor simulate(const std::vector<double>& theta, Rng& rng) const override;
  /// Row-wise: observed components kept, missing ones drawn from the
  /// conditional NMVM (the marginal law when a whole row is missing).
  ReplicateSet conditional_simulate(const std::vector<double>& theta,
                                    const IncompleteField& field, std::size_t H, Rng& rng,
                                    ChainState* state = nullptr) const override;

 private:
  GHModelSpec spec_;
};

}  // namespace nbe
