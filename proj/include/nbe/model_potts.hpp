#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nbe/model.hpp"

namespace nbe {

/// Labels 1..Q on an h x w grid, row-major.
struct LabelGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  LabelGrid() = default;
  LabelGrid(std::size_t h, std::size_t w, std::uint8_t fill = 1)
      : height(h), width(w), labels(h * w, fill) {}
  std::size_t size() const { return labels.size(); }
  bool operator==(const LabelGrid&) const = default;
};

LabelGrid labels_from_tensor(const Tensor& t, int Q);
Tensor labels_to_tensor(const LabelGrid& g);

/// Q-state Potts field with 4-neighbour adjacency (2 at corners, 3 on edges).
struct PottsSpec {
  std::size_t height = 16;
  std::size_t width = 16;
  int Q = 2;
  int sw_sweeps = 100;  // Swendsen-Wang steps per marginal draw
  int burn_in = 200;    // checkerboard sweeps per conditional run
  int spacing = 10;     // sweeps between retained conditional draws
  PriorSpec prior;      // beta ~ U(0, 1.5) by default

  static PottsSpec ising(std::size_t h, std::size_t w);
  void validate() const;
};

/// Ordered-pair count of agreeing neighbours (each agreeing edge counts twice).
long potts_suffstat(const LabelGrid& g, int Q);

/// P(z_i = q | neighbours) for q = 1..Q.
std::vector<double> potts_conditional(const LabelGrid& g, std::size_t site, double beta, int Q);

/// log C(beta) with C = sum over all Q^n labelings of exp(beta S / 2); needs Q^n <= 2^20.
double potts_log_normalizer_bruteforce(std::size_t height, std::size_t width, double beta, int Q);
/// beta S(z) / 2 - log C(beta) by full enumeration.
double potts_log_likelihood_bruteforce(const LabelGrid& g, double beta, int Q);

/// log p(z_obs | beta): sums exp(beta S / 2) over every completion of the
/// missing sites and divides by C(beta).
double potts_observed_log_likelihood_bruteforce(const IncompleteField& field, double beta, int Q);

struct PottsMap {
  double beta = 0.0;
  double log_posterior = 0.0;
};
/// Posterior mode of beta over the prior support by full enumeration: a
/// `grid`-point scan followed by golden-section refinement around the best
/// point.
PottsMap potts_map_bruteforce(const PottsSpec& spec, const IncompleteField& field,
                              std::size_t grid = 301);

/// White sites ((i + j) even) then black sites; clamped sites (mask 1) are fixed.
void checkerboard_gibbs_sweep(LabelGrid& g, double beta, int Q,
                              const std::vector<std::uint8_t>* clamped, Rng& rng);
void swendsen_wang_step(LabelGrid& g, double beta, int Q, Rng& rng);

/// Uniform start followed by `sweeps` Swendsen-Wang steps.
LabelGrid sample_potts(const PottsSpec& spec, double beta, int sweeps, Rng& rng);

/// Checkerboard Gibbs with observed sites clamped: burn_in sweeps, then H draws
/// `spacing` sweeps apart. Starts from state->last when valid (warm start) and
/// stores the final state back.
ReplicateSet conditional_sample_potts(const PottsSpec& spec, double beta,
                                      const IncompleteField& field, std::size_t H, int burn_in,
                                      int spacing, Rng& rng, ChainState* state = nullptr);

double critical_beta(int Q);

class PottsModel final : public DataModel {
 public:
  explicit PottsModel(PottsSpec spec);

  std::string name() const override { return "potts"; }
  Shape field_shape() const override { return {spec_.height, spec_.width}; }
  const PriorSpec& prior() const override { return spec_.prior; }
  const PottsSpec& spec() const { return spec_; }

  Tensor simulate(const std::vector<double>& theta, Rng& rng) const override;
  ReplicateSet conditional_simulate(const std::vector<double>& theta,
                                    const IncompleteField& field, std::size_t H, Rng& rng,
                                    ChainState* state = nullptr) const override;

 private:
  PottsSpec spec_;
};

}  // namespace nbe
