#pragma once

#include "nbe/model.hpp"

namespace nbe {

/// n i.i.d. Gau(0, theta) observations with an inverse-gamma(a, b) prior on
/// the variance theta. Fields are [n, 1].
struct GaussVarianceSpec {
  std::size_t n = 10;
  double prior_shape = 3.0;
  double prior_rate = 1.0;
  void validate() const;
};

/// Conjugate posterior mode (b + sum z^2 / 2) / (a + n/2 + 1).
double gaussian_variance_map(const std::vector<double>& z, double a, double b);

class GaussVarianceModel final : public DataModel {
 public:
  explicit GaussVarianceModel(GaussVarianceSpec spec);

  std::string name() const override { return "gaussian-variance"; }
  Shape field_shape() const override { return {spec_.n, 1}; }
  const PriorSpec& prior() const override { return prior_; }
  bool iid_rows() const override { return true; }
  const GaussVarianceSpec& spec() const { return spec_; }

  Tensor simulate(const std::vector<double>& theta, Rng& rng) const override;
  ReplicateSet conditional_simulate(const std::vector<double>& theta,
                                    const IncompleteField& field, std::size_t H, Rng& rng,
                                    ChainState* state = nullptr) const override;

 private:
  GaussVarianceSpec spec_;
  PriorSpec prior_;
};

}  // namespace nbe
