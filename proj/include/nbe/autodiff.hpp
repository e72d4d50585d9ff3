#pragma once
// Static computation graph with reverse-mode differentiation.
//
// A Graph is built once for fixed input shapes, then evaluated with
// forward() and differentiated with backward(). Parameters are shared
// leaves (shared_ptr) so several graphs, e.g. one per batch shape, can
// reference the same weights. Each Graph owns its activations; distinct
// graphs can be evaluated concurrently as long as nobody writes to the
// shared parameters at the same time.

#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nbe/tensor.hpp"

namespace nbe {

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};
using ParamPtr = std::shared_ptr<Parameter>;

ParamPtr make_param(std::string name, Tensor value, bool trainable = true);

enum class OpKind {
  Input,
  Param,
  Constant,
  Add,
  Mul,
  MatMul,
  Conv2d,
  Tanh,
  Relu,
  Softplus,
  Exp,
  Log,
  Mean,
  Sum,
  Reshape,
  Concat,
  BatchNorm,
  Head,
};

const char* op_name(OpKind kind);

/// Per-component output activation of the estimator head.
enum class HeadKind { Identity, Softplus, Bounded, Correlation };

struct HeadSegment {
  HeadKind kind = HeadKind::Identity;
  // Correlation: matrix dimension d; the segment spans d(d-1)/2 columns.
  std::size_t dim = 1;
  // Bounded: lo + (hi - lo) * sigmoid(x). Softplus: lo + softplus(x).
  double lo = 0.0;
  double hi = 1.0;

  std::size_t width() const;
  bool operator==(const HeadSegment&) const = default;
};

std::size_t head_width(const std::vector<HeadSegment>& segments);

/// Strictly lower-triangular correlation entries (row-major, i > j) of the
/// matrix built from unconstrained reals by the onion/Cholesky map.
/// `x` has d(d-1)/2 entries.
std::vector<double> correlation_from_reals(const double* x, std::size_t d);
/// Full d x d correlation matrix for the same map.
std::vector<double> correlation_matrix_from_reals(const double* x, std::size_t d);

struct Gradients {
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> inputs;
};

/// Batch statistics produced by a training-mode batch-norm node.
struct BatchNormStats {
  ParamPtr running_mean;
  ParamPtr running_var;
  std::vector<double> mean;
  std::vector<double> var;  // unbiased
};

class Graph {
 public:
  using Var = std::size_t;

  Var input(const std::string& name, Shape shape);
  Var parameter(const ParamPtr& p);
  Var constant(Tensor value, const std::string& label = "const");

  // b may equal a's shape or a's trailing dimensions (bias-style broadcast).
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  // [m,k] x [k,n]
  Var matmul(Var a, Var b);
  // x: [N,H,W,C], w: [kh,kw,C,O] -> [N,Ho,Wo,O]
  Var conv2d(Var x, Var w, std::size_t stride, std::size_t pad);
  Var tanh(Var x);
  Var relu(Var x);
  Var softplus(Var x);
  Var exp(Var x);
  Var log(Var x);
  // Reduced axes are dropped; reducing every axis gives shape [1].
  Var mean(Var x, std::vector<std::size_t> axes);
  Var sum(Var x, std::vector<std::size_t> axes);
  Var sum_all(Var x);
  Var reshape(Var x, Shape shape);
  Var concat(const std::vector<Var>& xs, std::size_t axis);
  // Normalizes over every axis but the last. training=true uses batch
  // statistics (and records them); otherwise the running statistics.
  Var batch_norm(Var x, Var gamma, Var beta, const ParamPtr& running_mean,
                 const ParamPtr& running_var, bool training, double eps = 1e-5);
  // x: [N, width]; applies per-segment output activations.
  Var head(Var x, std::vector<HeadSegment> segments);

  void set_output(const std::string& name, Var v);

  const Shape& shape(Var v) const;
  std::size_t size() const;
  std::string describe(Var v) const;
  const std::vector<ParamPtr>& parameters() const { return params_; }

  std::map<std::string, Tensor> forward(const std::map<std::string, Tensor>& inputs);
  /// Value of a node from the last forward pass.
  const Tensor& value(Var v) const;
  const Tensor& output(const std::string& name) const;
  bool has_forward() const { return forward_done_; }

  Gradients backward(const std::map<std::string, Tensor>& seeds);
  /// Single-output convenience.
  Gradients backward(const Tensor& seed);

  const std::vector<BatchNormStats>& batch_stats() const { return bn_stats_; }
  /// When off, backward() skips gradients that flow only into graph inputs
  /// (their entries in Gradients::inputs are then zero).
  void set_input_gradients(bool on) { input_grads_ = on; }

 private:
  struct Node;
  Var push(Node node);
  void eval(Node& n);
  void grad(Node& n, std::vector<Tensor>& g);
  Tensor& grad_of(std::vector<Tensor>& g, Var v);

  std::vector<Node> nodes_;
  std::vector<ParamPtr> params_;
  std::map<std::string, Var> inputs_;
  std::vector<std::pair<std::string, Var>> outputs_;
  std::vector<BatchNormStats> bn_stats_;
  bool forward_done_ = false;
  bool input_grads_ = true;

 public:
  Graph();
  ~Graph();
  Graph(Graph&&) noexcept;
  Graph& operator=(Graph&&) noexcept;
};

/// Max over trainable parameter entries of
/// |autodiff - central difference| / (|central difference| + 1e-8)
/// for a graph with one scalar output.
double finite_diff_check(Graph& graph, const std::map<std::string, Tensor>& inputs,
                         double step);

}  // namespace nbe
