#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nbe/missingness.hpp"
#include "nbe/priors.hpp"
#include "nbe/rng.hpp"
#include "nbe/tensor.hpp"

namespace nbe {

/// H conditionally independent completed fields sharing the observed entries.
using ReplicateSet = std::vector<Tensor>;

/// Carries an MCMC state between successive conditional simulations
/// (warm starts across EM iterations). Ignored by exact samplers.
struct ChainState {
  Tensor last;
  bool valid = false;
};

/// A statistical model the estimators can train against: prior, marginal
/// simulator, and (optionally) a simulator of missing entries given the
/// observed ones.
class DataModel {
 public:
  virtual ~DataModel() = default;

  virtual std::string name() const = 0;
  /// Shape of one complete field, e.g. [h, w] or [n].
  virtual Shape field_shape() const = 0;
  virtual const PriorSpec& prior() const = 0;

  virtual Tensor simulate(const std::vector<double>& theta, Rng& rng) const = 0;
  virtual ReplicateSet simulate_replicates(const std::vector<double>& theta, std::size_t H,
                                           Rng& rng) const;

  virtual bool has_conditional() const { return true; }
  /// True when a field's rows are i.i.d. vectors (each row is one set
  /// element); false for spatial grids, which enter networks whole.
  virtual bool iid_rows() const { return false; }
  /// H draws of the missing entries given the observed ones; observed
  /// entries are copied verbatim.
  virtual ReplicateSet conditional_simulate(const std::vector<double>& theta,
                                            const IncompleteField& field, std::size_t H,
                                            Rng& rng, ChainState* state = nullptr) const = 0;
};

}  // namespace nbe
