#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "nbe/estimators.hpp"
#include "nbe/eval.hpp"
#include "nbe/losses.hpp"
#include "nbe/missingness.hpp"
#include "nbe/model.hpp"
#include "nbe/nn.hpp"
#include "nbe/priors.hpp"

namespace nbe {

struct ModelConfig {
  std::string kind = "gp";  // gp | potts | gh | gaussian-variance
  // gp, potts
  std::size_t height = 16;
  std::size_t width = 16;
  // gp
  double nu = 1.0;
  double sigma2 = 1.0;
  std::string nugget = "free";  // free | fixed
  double tau = 0.0;             // fixed nugget value
  // potts
  int q = 2;
  int sw_sweeps = 100;
  int burn_in = 200;
  int spacing = 10;
  // gh
  std::size_t dim = 3;
  std::size_t rows = 200;
  // gaussian-variance
  std::size_t n = 10;
  bool operator==(const ModelConfig&) const = default;
};

struct BootstrapConfig {
  std::string kind = "parametric";  // parametric | nonparametric
  std::string estimator = "em";     // em | masking
  std::size_t B = 100;
  std::uint64_t seed = 1;
  bool operator==(const BootstrapConfig&) const = default;
};

struct ExperimentConfig {
  std::size_t test_size = 200;
  std::uint64_t seed = 1;
  std::vector<NamedMissingness> missingness{
      {"MCAR", MissingnessModel::fixed(MissingKind::MCAR, 0.2)},
      {"MICB", MissingnessModel::fixed(MissingKind::MICB, 0.2)}};
  bool operator==(const ExperimentConfig& o) const;
};

struct PathsConfig {
  std::string masking_checkpoint = "masking.ckpt";
  std::string map_checkpoint = "map.ckpt";
  std::string data = "data.csv";
  std::string output = ".";
  bool operator==(const PathsConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  std::vector<PriorBlock> prior;  // empty: the model's default prior
  LossSpec loss = LossSpec::tanh(0.1);
  TrainingConfig training;
  std::string variant = "masking";  // masking | map
  std::size_t width = 0;            // network width; 0 picks the model default
  EMConfig em;
  MissingnessModel missingness = MissingnessModel::range(MissingKind::MCAR, 0.1, 0.9);
  ExperimentConfig experiment;
  BootstrapConfig bootstrap;
  PathsConfig paths;
  bool operator==(const RunConfig&) const = default;
};

/// Parses the `[section]` / `key = value` format. Every violation is
/// collected; a non-empty list is thrown as one Config error.
RunConfig parse_config(const std::string& text);
/// Same, returning the violations instead of throwing.
RunConfig parse_config(const std::string& text, std::vector<std::string>& errors);
std::string render_config(const RunConfig& cfg);

/// Edit distance used for "did you mean" hints.
std::size_t levenshtein(const std::string& a, const std::string& b);

std::unique_ptr<DataModel> make_model(const RunConfig& cfg);

}  // namespace nbe
