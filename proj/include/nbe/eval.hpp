#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nbe/estimators.hpp"
#include "nbe/model_gp.hpp"

namespace nbe {

/// sqrt(mean_k ||est_k - truth_k||^2).
double empirical_rmse(const std::vector<std::vector<double>>& estimates,
                      const std::vector<std::vector<double>>& truths);

/// Linear-interpolation sample quantile (type 7).
double sample_quantile(std::vector<double> values, double p);

struct EstimateOutcome {
  std::vector<double> theta;
  std::string status = "ok";  // "ok", an EM status, or "error: ..."
  double simulation_seconds = 0.0;
  double network_seconds = 0.0;
};

using FieldEstimator = std::function<EstimateOutcome(const IncompleteField&, Rng&)>;

struct NamedEstimator {
  std::string name;
  FieldEstimator fn;
  double training_seconds = 0.0;
};

NamedEstimator masking_estimator(std::string name, const EstimatorHandle& h,
                                 const DataModel& model);
NamedEstimator em_estimator(std::string name, const EstimatorHandle& h, const DataModel& model,
                            EMConfig cfg);
/// Complete-data estimator (ensemble of one or more members); rejects
/// fields with missing entries.
NamedEstimator complete_estimator(std::string name, const EnsembleHandle& e,
                                  const DataModel& model);
NamedEstimator gp_map_estimator(std::string name, GPSpec spec);

// ---------------------------------------------------------------------------
// Bootstrap

struct BootstrapResult {
  std::vector<std::vector<double>> estimates;  // successful replicates, in order
  std::vector<double> lower, upper;            // 2.5% and 97.5% quantiles
  std::size_t dropped = 0;
};

/// Simulates B fields at theta_hat, masks them like `observed`, and
/// re-estimates. Replicate b uses stream (seed, b).
BootstrapResult parametric_bootstrap(const DataModel& model, const std::vector<double>& theta_hat,
                                     const std::vector<std::uint8_t>& observed,
                                     const FieldEstimator& estimator, std::size_t B,
                                     std::uint64_t seed, std::size_t threads = 1);

using SetEstimator = std::function<std::vector<double>(const std::vector<Tensor>& units, Rng&)>;

/// Resamples the exchangeable units with replacement and re-estimates.
BootstrapResult nonparametric_bootstrap(const std::vector<Tensor>& units,
                                        const SetEstimator& estimator, std::size_t B,
                                        std::uint64_t seed, std::size_t threads = 1);

/// Rows of a [T, d] field as T tensors of shape [d], and back.
std::vector<Tensor> split_rows(const Tensor& field);
Tensor join_rows(const std::vector<Tensor>& rows);

// ---------------------------------------------------------------------------
// Experiments

struct NamedMissingness {
  std::string name;
  MissingnessModel model;
};

struct ExperimentSpec {
  const DataModel* model = nullptr;
  std::vector<NamedEstimator> estimators;
  std::vector<NamedMissingness> missingness;
  std::size_t test_size = 200;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::string csv_path;   // per-case table; empty: not written
  std::string json_path;  // summary; empty: not written
  void validate() const;
};

struct ExperimentRow {
  std::size_t case_id = 0;
  std::string missingness;
  std::vector<double> truth;
  std::vector<EstimateOutcome> outcomes;  // one per estimator
  std::vector<double> seconds;
};

struct EstimatorSummary {
  double training_seconds = 0.0;
  std::map<std::string, double> rmse;            // per missingness model
  std::map<std::string, double> mean_seconds;    // estimation time per case
  std::map<std::string, double> mean_simulation_seconds;
  std::map<std::string, double> mean_network_seconds;
  std::map<std::string, std::size_t> failures;
  std::map<std::string, std::size_t> nonconverged;
};

struct ExperimentResult {
  std::vector<std::string> parameter_names;
  std::vector<ExperimentRow> rows;
  std::map<std::string, EstimatorSummary> summary;
  std::string summary_json() const;
  void write_csv(std::ostream& out, const ExperimentSpec& spec) const;
};

/// Test case k draws theta and the complete field from stream (seed, k);
/// each missingness model masks that field once and every estimator sees
/// the same incomplete field.
ExperimentResult run_experiment(const ExperimentSpec& spec);

}  // namespace nbe
