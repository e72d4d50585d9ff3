#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nbe/autodiff.hpp"
#include "nbe/losses.hpp"
#include "nbe/model.hpp"
#include "nbe/rng.hpp"

namespace nbe {

enum class LayerKind { Conv, ResBlock, BatchNorm, GlobalMeanPool, Flatten, Dense };
enum class Activation { None, Relu, Tanh, Softplus };
/// Elementwise transform applied to the raw input before the first layer.
enum class InputTransform { None, CubeRoot };

const char* layer_name(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);  // throws Unsupported
const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);
const char* transform_name(InputTransform t);
InputTransform parse_transform(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::size_t out = 0;  // channels (conv, resblock) or units (dense)
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  bool bias = true;  // conv and dense
  Activation act = Activation::Relu;

  static LayerSpec conv(std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad,
                        bool bias, Activation act);
  static LayerSpec resblock(std::size_t out, std::size_t stride);
  static LayerSpec batchnorm(Activation act);
  static LayerSpec gmp();
  static LayerSpec flatten();
  static LayerSpec dense(std::size_t out, Activation act);
  bool operator==(const LayerSpec&) const = default;
};

/// DeepSets network: summary layers psi applied to each set element, mean
/// over the set, inference layers phi, then the output head.
struct ArchitectureSpec {
  Shape element_shape;  // [h, w, C] for grids, [d] for vectors
  std::vector<LayerSpec> summary;
  std::vector<LayerSpec> inference;
  std::vector<HeadSegment> head;
  InputTransform transform = InputTransform::None;

  /// Per-element shape after the summary layers; must be rank 1.
  Shape summary_shape() const;
  std::size_t output_width() const { return head_width(head); }
  void validate() const;
  bool operator==(const ArchitectureSpec&) const = default;
};

/// Small residual CNN for grids: conv-BN-ReLU, two downsampling residual
/// blocks, global mean pooling, dense stack.
ArchitectureSpec grid_architecture(std::size_t h, std::size_t w, std::size_t channels,
                                   std::vector<HeadSegment> head, std::size_t width = 8);
/// Fully connected DeepSets network for i.i.d. vectors of length d.
ArchitectureSpec vector_architecture(std::size_t d, std::vector<HeadSegment> head,
                                     std::size_t width = 64,
                                     InputTransform transform = InputTransform::None);

struct EpochRecord {
  int epoch = 0;
  double train = 0.0;
  double validation = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct EstimatorMetadata {
  std::string variant;  // "masking", "map", or "plain"
  std::string model;
  LossSpec loss;
  std::size_t H = 1;
  std::string prior_digest;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  bool operator==(const EstimatorMetadata&) const = default;
};

/// A trained network. Weights (including batch-norm running statistics)
/// are rounded to float32 so that checkpoints are exact.
struct EstimatorHandle {
  ArchitectureSpec arch;
  std::vector<ParamPtr> weights;
  EstimatorMetadata meta;

  std::size_t parameter_count() const;  // trainable entries
  void validate() const;
};

/// Fresh weights (He-normal for convolution and dense kernels).
EstimatorHandle init_estimator(const ArchitectureSpec& arch, std::uint64_t seed);
EstimatorHandle clone_estimator(const EstimatorHandle& h);
void round_weights_to_float(EstimatorHandle& h);

/// Builds the network graph for N sets of S elements each; input "x" has
/// shape [N*S, element_shape...], output "theta" has shape [N, p].
Graph build_network(const EstimatorHandle& h, std::size_t N, std::size_t S, bool training);

/// Applies the network to N sets stacked as [N*S, element...]; returns [N, p].
Tensor network_forward(const EstimatorHandle& h, const Tensor& x, std::size_t N);

/// phi(mean_h psi(Z_h)). Each replicate is one element (element_shape) or a
/// block of elements ([r, element_shape...]); all must share one shape.
std::vector<double> deepsets_forward(const EstimatorHandle& h, const ReplicateSet& replicates);

/// [h, w, c] -> [1, 1, c] channel means.
Tensor global_mean_pool(const Tensor& features);

struct TrainingConfig {
  std::size_t K = 5000;
  std::size_t batch = 32;
  double learning_rate = 5e-4;
  std::string optimizer = "adam";
  int patience = 5;
  int max_epochs = 100;
  double validation_fraction = 0.1;
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> init_seed;  // weight initialization; default: seed
  std::size_t threads = 1;  // simulation workers
  bool verbose = false;

  void validate() const;
  bool operator==(const TrainingConfig&) const = default;
};

/// Stops once the monitored value has not decreased for `patience` epochs.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);
  /// Records one epoch; returns true when training should stop.
  bool update(double value);
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }
  int epochs() const { return epoch_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int since_best_ = 0;
  double best_;
};

/// One simulated training example; x holds the stacked set elements
/// [S, element_shape...] (S may be 1).
struct TrainingPair {
  std::vector<double> theta;
  Tensor x;
};
/// Draws training pair number k; must depend only on (k, rng).
using PairSampler = std::function<TrainingPair(std::size_t k, Rng& rng)>;

/// Simulates K pairs (stream per pair, split from the seed), holds out a
/// validation fraction, and trains with early stopping. The returned handle
/// carries the weights of the epoch with the lowest validation objective.
EstimatorHandle train(const ArchitectureSpec& arch, const LossSpec& loss,
                      const PairSampler& sampler, const TrainingConfig& cfg,
                      EstimatorMetadata meta = {});

/// Mean loss of the network over stacked pairs; used for validation.
double evaluate_loss(const EstimatorHandle& h, const LossSpec& loss,
                     const std::vector<TrainingPair>& pairs, std::size_t batch = 64);

std::string save_checkpoint(const EstimatorHandle& h);
EstimatorHandle load_checkpoint(const std::string& bytes);
void save_checkpoint_file(const EstimatorHandle& h, const std::string& path);
EstimatorHandle load_checkpoint_file(const std::string& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace nbe
