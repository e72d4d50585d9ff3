#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "nbe/missingness.hpp"
#include "nbe/model.hpp"
#include "nbe/nn.hpp"

namespace nbe {

// ---------------------------------------------------------------------------
// Network inputs. Grid fields [h, w] become one element [1, h, w, C]; row
// models ([T, d], iid_rows) contribute T elements of width d. The masked
// encodings carry (U, W): a second channel for grids, W appended to each row.

Tensor encode_complete(const DataModel& model, const Tensor& field);
Tensor encode_incomplete(const DataModel& model, const IncompleteField& field);
/// Concatenates element stacks along the leading axis.
Tensor stack_elements(const std::vector<Tensor>& parts);

/// Default network for a model: residual CNN for grids, MLP for rows.
ArchitectureSpec default_architecture(const DataModel& model, bool masked,
                                      std::size_t width = 0);

// ---------------------------------------------------------------------------
// Masking estimator

EstimatorHandle train_masking_nbe(const DataModel& model, const MissingnessModel& missing,
                                  const LossSpec& loss, const TrainingConfig& cfg,
                                  std::optional<ArchitectureSpec> arch = std::nullopt);
std::vector<double> estimate_masking(const EstimatorHandle& h, const DataModel& model,
                                     const IncompleteField& field);

// ---------------------------------------------------------------------------
// Complete-data MAP estimator over H replicates (trained on the power prior)

EstimatorHandle train_map_nbe(const DataModel& model, const LossSpec& loss, std::size_t H,
                              const TrainingConfig& cfg,
                              std::optional<ArchitectureSpec> arch = std::nullopt);
std::vector<double> estimate_complete(const EstimatorHandle& h, const DataModel& model,
                                      const ReplicateSet& replicates);

// ---------------------------------------------------------------------------
// Neural Monte Carlo EM

struct EMConfig {
  std::size_t H = 30;
  int max_iterations = 50;
  double tolerance = 0.01;
  int hits = 3;
  std::optional<std::vector<double>> init;  // default: prior mean
  void validate() const;
  bool operator==(const EMConfig&) const = default;
};

enum class EMStatus { Converged, MaxIterations, Failed };
const char* em_status_name(EMStatus s);

struct EMResult {
  std::vector<double> theta;
  /// trace[0] is the initial value; trace[l] the l-th iterate.
  std::vector<std::vector<double>> trace;
  std::vector<double> changes;  // relative change at iterations 1..L
  EMStatus status = EMStatus::MaxIterations;
  std::string failure;
  int iterations = 0;
  double simulation_seconds = 0.0;
  double network_seconds = 0.0;
};

EMResult neural_em(const EstimatorHandle& h, const DataModel& model,
                   const IncompleteField& field, const EMConfig& cfg, Rng& rng);
/// CSV columns: iteration, one per parameter, relative_change.
void write_em_trace(std::ostream& out, const EMResult& r, const std::vector<std::string>& names);

// ---------------------------------------------------------------------------
// Ensembles

struct EnsembleHandle {
  std::vector<EstimatorHandle> members;
  void validate() const;
};

/// Mean of member outputs on stacked elements [S, element...].
std::vector<double> ensemble_estimate(const EnsembleHandle& e, const Tensor& elements);
/// Same, with replicates already encoded (see encode_complete).
std::vector<double> ensemble_estimate(const EnsembleHandle& e, const ReplicateSet& replicates);

}  // namespace nbe
