#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "nbe/model.hpp"

namespace nbe {

/// Stationary isotropic Gaussian process on a regular grid over [0,1]^2
/// with Matern covariance plus nugget. The free parameters are (tau, rho),
/// or rho alone when the nugget is fixed.
struct GPSpec {
  std::size_t height = 16;
  std::size_t width = 16;
  double sigma2 = 1.0;
  double nu = 1.0;
  bool free_nugget = true;
  double fixed_tau = 0.0;  // used when !free_nugget
  PriorSpec prior;

  /// nu = 1, theta = (tau, rho), tau ~ U(0,1), rho ~ U(0,0.35).
  static GPSpec matern(std::size_t h, std::size_t w);
  /// nu = 1/2, tau = 0, theta = rho ~ U(0,0.5).
  static GPSpec exponential(std::size_t h, std::size_t w);

  std::size_t n() const { return height * width; }
  void validate() const;
};

struct GPParams {
  double tau = 0.0;
  double rho = 1.0;
};

GPParams gp_params(const GPSpec& spec, const std::vector<double>& theta);

/// sigma2 2^(1-nu)/Gamma(nu) (d/rho)^nu K_nu(d/rho); sigma2 at d = 0.
double matern_correlation_term(double d, double sigma2, double nu, double rho);

/// Distance between grid sites (i1, j1) and (i2, j2); spacing 1/(n-1) per axis.
double grid_distance(const GPSpec& spec, std::size_t a, std::size_t b);

/// Full covariance (n x n) including the nugget on the diagonal.
Eigen::MatrixXd matern_cov(const GPSpec& spec, const std::vector<double>& theta);
/// Covariance rows/cols restricted to site index sets.
Eigen::MatrixXd matern_cov_block(const GPSpec& spec, const std::vector<double>& theta,
                                 const std::vector<std::size_t>& rows,
                                 const std::vector<std::size_t>& cols);

/// Lower Cholesky factor. On failure adds 1e-10*scale to the diagonal and
/// escalates x10 at most three times before throwing a Numerical error.
Eigen::MatrixXd cholesky_jittered(const Eigen::MatrixXd& a, double scale);

Tensor simulate_gp(const GPSpec& spec, const std::vector<double>& theta, Rng& rng);
ReplicateSet simulate_gp_replicates(const GPSpec& spec, const std::vector<double>& theta,
                                    std::size_t H, Rng& rng);
ReplicateSet conditional_simulate_gp(const GPSpec& spec, const std::vector<double>& theta,
                                     const IncompleteField& field, std::size_t H, Rng& rng);

/// Conditional mean and covariance of the missing sites (in index order).
struct KrigingResult {
  std::vector<std::size_t> missing;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};
KrigingResult gp_kriging(const GPSpec& spec, const std::vector<double>& theta,
                         const IncompleteField& field);

/// Log density of the observed entries plus log prior; -inf outside support.
double gp_log_posterior(const GPSpec& spec, const std::vector<double>& theta,
                        const IncompleteField& field);

struct MapResult {
  std::vector<double> theta;
  double log_posterior = 0.0;
  bool converged = false;
  int evals = 0;
};

/// Nelder-Mead from 5 Latin-hypercube stratified starts; best result kept.
MapResult map_estimate_gp(const GPSpec& spec, const IncompleteField& field);

class GPModel final : public DataModel {
 public:
  explicit GPModel(GPSpec spec);

  std::string name() const override { return spec_.free_nugget ? "gp" : "gp-exponential"; }
  Shape field_shape() const override { return {spec_.height, spec_.width}; }
  const PriorSpec& prior() const override { return spec_.prior; }
  const GPSpec& spec() const { return spec_; }

  Tensor simulate(const std::vector<double>& theta, Rng& rng) const override;
  ReplicateSet simulate_replicates(const std::vector<double>& theta, std::size_t H,
                                   Rng& rng) const override;
  ReplicateSet conditional_simulate(const std::vector<double>& theta,
                                    const IncompleteField& field, std::size_t H, Rng& rng,
                                    ChainState* state = nullptr) const override;

 private:
  GPSpec spec_;
};

}  // namespace nbe
