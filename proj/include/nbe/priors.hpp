#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nbe/autodiff.hpp"
#include "nbe/rng.hpp"

namespace nbe {

enum class PriorFamily { Uniform, Beta, TruncGauss, Gamma, Pareto, InvGamma, Lkj };

const char* family_name(PriorFamily f);
PriorFamily parse_family(const std::string& name);

/// One block of the parameter vector. Scalar families use:
///   uniform(a=lo, b=hi), beta(a, b), truncgauss(a=mu, b=sigma, lo, hi),
///   gamma(a=shape, b=rate), pareto(a=scale, b=shape), invgamma(a=shape, b=rate).
/// Lkj covers the d(d-1)/2 strictly-lower correlation entries of a d x d
/// matrix (row-major, i > j) with concentration a = eta.
struct PriorBlock {
  PriorFamily family = PriorFamily::Uniform;
  double a = 0.0;
  double b = 1.0;
  double lo = 0.0;
  double hi = 1.0;
  std::size_t dim = 1;  // Lkj matrix dimension
  std::string name;

  static PriorBlock uniform(std::string name, double lo, double hi);
  static PriorBlock beta(std::string name, double a, double b);
  static PriorBlock truncgauss(std::string name, double mu, double sigma, double lo,
                               double hi);
  static PriorBlock gamma(std::string name, double shape, double rate);
  static PriorBlock pareto(std::string name, double scale, double shape);
  static PriorBlock invgamma(std::string name, double shape, double rate);
  static PriorBlock lkj(std::string name, std::size_t dim, double eta);

  std::size_t width() const;
  void validate() const;
  /// Normalized log density (scalar families evaluate x[0]).
  double log_density(const double* x) const;
  double lower() const;
  double upper() const;
  bool operator==(const PriorBlock&) const = default;
};

struct PriorSpec {
  std::vector<PriorBlock> blocks;

  std::size_t dim() const;
  void validate() const;
  std::vector<std::string> names() const;
  /// Canonical text form, used as the prior digest in checkpoints.
  std::string render() const;
  bool operator==(const PriorSpec&) const = default;
};

std::vector<double> sample_prior(const PriorSpec& spec, Rng& rng);
/// Exact family of pi^H renormalized; rejects non-closed or invalidated blocks.
PriorSpec power_prior(const PriorSpec& spec, int H);
PriorBlock power_block(const PriorBlock& block, int H);
double prior_log_density(const PriorSpec& spec, const std::vector<double>& theta);
bool in_support(const PriorSpec& spec, const std::vector<double>& theta);
std::vector<double> prior_mean(const PriorSpec& spec);
std::vector<double> support_lower(const PriorSpec& spec);
std::vector<double> support_upper(const PriorSpec& spec);
/// Output activations that keep network estimates inside the support.
std::vector<HeadSegment> head_for_prior(const PriorSpec& spec);

/// Onion-method LKJ(eta) draw; returns the full d x d matrix, row-major.
std::vector<double> sample_lkj(std::size_t d, double eta, Rng& rng);

}  // namespace nbe
