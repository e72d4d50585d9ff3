#include "nbe/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>
#include <zlib.h>

#include "nbe/error.hpp"

namespace nbe {

using nlohmann::json;

namespace {

constexpr double kBnMomentum = 0.1;
constexpr char kMagic[8] = {'N', 'B', 'E', 'C', 'K', 'P', 'T', '\n'};

// ---------------------------------------------------------------------------
// Parameter lookup shared by init_estimator and build_network.

enum class Init { HeNormal, Zeros, Ones, Small };

class ParamStore {
 public:
  // Creating store: new parameters are drawn from rng and appended to out.
  ParamStore(std::vector<ParamPtr>* out, Rng* rng) : out_(out), rng_(rng) {}
  // Lookup store over existing weights.
  explicit ParamStore(const std::vector<ParamPtr>& weights) {
    for (const auto& p : weights) by_name_[p->name] = p;
  }

  ParamPtr get(const std::string& name, const Shape& shape, Init init, std::size_t fan_in,
               bool trainable = true) {
    if (out_ == nullptr) {
      auto it = by_name_.find(name);
      require(it != by_name_.end(), ErrorKind::Format, "missing weight '" + name + "'");
      require(it->second->value.shape() == shape, ErrorKind::Format,
              "weight '" + name + "' has shape " + shape_str(it->second->value.shape()) +
                  ", architecture needs " + shape_str(shape));
      return it->second;
    }
    Tensor t(shape);
    switch (init) {
      case Init::HeNormal:
      case Init::Small: {
        const double sd = std::sqrt((init == Init::Small ? 1.0 : 2.0) / static_cast<double>(fan_in));
        std::normal_distribution<double> norm(0.0, sd);
        for (auto& v : t.values()) v = norm(*rng_);
        break;
      }
      case Init::Zeros:
        break;
      case Init::Ones:
        t.fill(1.0);
        break;
    }
    auto p = make_param(name, std::move(t), trainable);
    out_->push_back(p);
    return p;
  }

 private:
  std::vector<ParamPtr>* out_ = nullptr;
  Rng* rng_ = nullptr;
  std::map<std::string, ParamPtr> by_name_;
};

Graph::Var activate(Graph& g, Graph::Var x, Activation a) {
  switch (a) {
    case Activation::None:
      return x;
    case Activation::Relu:
      return g.relu(x);
    case Activation::Tanh:
      return g.tanh(x);
    case Activation::Softplus:
      return g.softplus(x);
  }
  return x;
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  require(in + 2 * pad >= k, ErrorKind::Config, "convolution kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

struct Builder {
  Graph& g;
  ParamStore& store;
  bool training;

  Graph::Var bn(Graph::Var x, std::size_t c, const std::string& name) {
    auto gamma = store.get(name + ".gamma", {c}, Init::Ones, 1);
    auto beta = store.get(name + ".beta", {c}, Init::Zeros, 1);
    auto rm = store.get(name + ".mean", {c}, Init::Zeros, 1, false);
    auto rv = store.get(name + ".var", {c}, Init::Ones, 1, false);
    return g.batch_norm(x, g.parameter(gamma), g.parameter(beta), rm, rv, training);
  }

  Graph::Var conv(Graph::Var x, std::size_t cin, std::size_t cout, std::size_t k,
                  std::size_t stride, std::size_t pad, bool bias, const std::string& name) {
    auto w = store.get(name + ".w", {k, k, cin, cout}, Init::HeNormal, k * k * cin);
    Graph::Var y = g.conv2d(x, g.parameter(w), stride, pad);
    if (bias) y = g.add(y, g.parameter(store.get(name + ".b", {cout}, Init::Zeros, 1)));
    return y;
  }

  Graph::Var dense(Graph::Var x, std::size_t fin, std::size_t fout, bool bias, Init init,
                   const std::string& name) {
    auto w = store.get(name + ".w", {fin, fout}, init, fin);
    Graph::Var y = g.matmul(x, g.parameter(w));
    if (bias) y = g.add(y, g.parameter(store.get(name + ".b", {fout}, Init::Zeros, 1)));
    return y;
  }
};

// Shape of each element after layer l; rank 3 ([h,w,c]) or rank 1 ([f]).
Shape apply_layer_shape(const Shape& in, const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::Conv:
      require(in.size() == 3, ErrorKind::Config, "conv layer needs [h,w,c] input");
      require(l.out >= 1 && l.kernel >= 1 && l.stride >= 1, ErrorKind::Config,
              "conv layer needs positive out, kernel and stride");
      return {conv_out(in[0], l.kernel, l.stride, l.pad), conv_out(in[1], l.kernel, l.stride, l.pad),
              l.out};
    case LayerKind::ResBlock:
      require(in.size() == 3, ErrorKind::Config, "residual block needs [h,w,c] input");
      require(l.out >= 1 && l.stride >= 1, ErrorKind::Config,
              "residual block needs positive out and stride");
      return {conv_out(in[0], 3, l.stride, 1), conv_out(in[1], 3, l.stride, 1), l.out};
    case LayerKind::BatchNorm:
      return in;
    case LayerKind::GlobalMeanPool:
      require(in.size() == 3, ErrorKind::Config, "global mean pooling needs [h,w,c] input");
      return {in[2]};
    case LayerKind::Flatten:
      return {shape_size(in)};
    case LayerKind::Dense:
      require(in.size() == 1, ErrorKind::Config, "dense layer needs a flat input");
      require(l.out >= 1, ErrorKind::Config, "dense layer needs positive width");
      return {l.out};
  }
  return in;
}

}  // namespace

// ---------------------------------------------------------------------------
// Names

const char* layer_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::ResBlock: return "resblock";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::GlobalMeanPool: return "gmp";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& name) {
  for (LayerKind k : {LayerKind::Conv, LayerKind::ResBlock, LayerKind::BatchNorm,
                      LayerKind::GlobalMeanPool, LayerKind::Flatten, LayerKind::Dense}) {
    if (name == layer_name(k)) return k;
  }
  fail(ErrorKind::Unsupported, "unsupported layer kind '" + name + "'");
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Softplus: return "softplus";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  for (Activation a : {Activation::None, Activation::Relu, Activation::Tanh, Activation::Softplus}) {
    if (name == activation_name(a)) return a;
  }
  fail(ErrorKind::Unsupported, "unsupported activation '" + name + "'");
}

const char* transform_name(InputTransform t) {
  return t == InputTransform::CubeRoot ? "cuberoot" : "none";
}

InputTransform parse_transform(const std::string& name) {
  if (name == "none") return InputTransform::None;
  if (name == "cuberoot") return InputTransform::CubeRoot;
  fail(ErrorKind::Unsupported, "unsupported input transform '" + name + "'");
}

LayerSpec LayerSpec::conv(std::size_t out, std::size_t kernel, std::size_t stride,
                          std::size_t pad, bool bias, Activation act) {
  return {LayerKind::Conv, out, kernel, stride, pad, bias, act};
}
LayerSpec LayerSpec::resblock(std::size_t out, std::size_t stride) {
  return {LayerKind::ResBlock, out, 3, stride, 1, false, Activation::Relu};
}
LayerSpec LayerSpec::batchnorm(Activation act) {
  return {LayerKind::BatchNorm, 0, 0, 1, 0, false, act};
}
LayerSpec LayerSpec::gmp() { return {LayerKind::GlobalMeanPool, 0, 0, 1, 0, false, Activation::None}; }
LayerSpec LayerSpec::flatten() { return {LayerKind::Flatten, 0, 0, 1, 0, false, Activation::None}; }
LayerSpec LayerSpec::dense(std::size_t out, Activation act) {
  return {LayerKind::Dense, out, 0, 1, 0, true, act};
}

// ---------------------------------------------------------------------------
// Architecture

Shape ArchitectureSpec::summary_shape() const {
  require(!element_shape.empty() && shape_size(element_shape) > 0, ErrorKind::Config,
          "architecture: element shape must be nonempty");
  require(element_shape.size() == 1 || element_shape.size() == 3, ErrorKind::Config,
          "architecture: element shape must be [d] or [h,w,c]");
  Shape s = element_shape;
  for (const auto& l : summary) s = apply_layer_shape(s, l);
  return s;
}

void ArchitectureSpec::validate() const {
  const Shape s = summary_shape();
  require(s.size() == 1, ErrorKind::Config,
          "architecture: summary network must end flat (add gmp or flatten), got " + shape_str(s));
  for (const auto& l : inference) {
    require(l.kind == LayerKind::Dense && l.out >= 1, ErrorKind::Config,
            "architecture: inference layers must be dense with positive width");
  }
  require(!head.empty() && head_width(head) >= 1, ErrorKind::Config,
          "architecture: output head is empty");
}

ArchitectureSpec grid_architecture(std::size_t h, std::size_t w, std::size_t channels,
                                   std::vector<HeadSegment> head, std::size_t width) {
  ArchitectureSpec a;
  a.element_shape = {h, w, channels};
  a.summary = {LayerSpec::conv(width, 3, 1, 1, false, Activation::None),
               LayerSpec::batchnorm(Activation::Relu),
               LayerSpec::resblock(2 * width, 2),
               LayerSpec::resblock(4 * width, 2),
               LayerSpec::gmp()};
  a.inference = {LayerSpec::dense(16 * width, Activation::Relu)};
  a.head = std::move(head);
  a.validate();
  return a;
}

ArchitectureSpec vector_architecture(std::size_t d, std::vector<HeadSegment> head,
                                     std::size_t width, InputTransform transform) {
  ArchitectureSpec a;
  a.element_shape = {d};
  a.summary = {LayerSpec::dense(width, Activation::Relu), LayerSpec::dense(width, Activation::Relu),
               LayerSpec::dense(width, Activation::Relu)};
  a.inference = {LayerSpec::dense(width, Activation::Relu)};
  a.head = std::move(head);
  a.transform = transform;
  a.validate();
  return a;
}

// ---------------------------------------------------------------------------
// Network construction

namespace {

// Grid networks whose summary pools before any flatten accept any h x w.
bool spatially_flexible(const ArchitectureSpec& arch) {
  if (arch.element_shape.size() != 3) return false;
  for (const auto& l : arch.summary) {
    if (l.kind == LayerKind::GlobalMeanPool) return true;
    if (l.kind == LayerKind::Flatten || l.kind == LayerKind::Dense) return false;
  }
  return false;
}

Graph build_with(const ArchitectureSpec& arch, ParamStore& store, std::size_t N, std::size_t S,
                 bool training, const Shape* elem_override = nullptr) {
  arch.validate();
  const Shape& elem = elem_override ? *elem_override : arch.element_shape;
  require(N >= 1 && S >= 1, ErrorKind::InvalidArgument, "network: N and S must be >= 1");
  Graph g;
  Builder b{g, store, training};
  Shape in{N * S};
  in.insert(in.end(), elem.begin(), elem.end());
  Graph::Var x = g.input("x", in);
  Shape s = elem;
  for (std::size_t li = 0; li < arch.summary.size(); ++li) {
    const LayerSpec& l = arch.summary[li];
    const std::string name = "psi" + std::to_string(li);
    const Shape next = apply_layer_shape(s, l);
    switch (l.kind) {
      case LayerKind::Conv:
        x = activate(g, b.conv(x, s[2], l.out, l.kernel, l.stride, l.pad, l.bias, name), l.act);
        break;
      case LayerKind::BatchNorm:
        x = activate(g, b.bn(x, s.back(), name), l.act);
        break;
      case LayerKind::ResBlock: {
        Graph::Var y = b.conv(x, s[2], l.out, 3, l.stride, 1, false, name + ".conv1");
        y = g.relu(b.bn(y, l.out, name + ".bn1"));
        y = b.conv(y, l.out, l.out, 3, 1, 1, false, name + ".conv2");
        y = b.bn(y, l.out, name + ".bn2");
        Graph::Var skip = x;
        if (l.stride != 1 || s[2] != l.out) {
          skip = b.conv(x, s[2], l.out, 1, l.stride, 0, false, name + ".skip");
          skip = b.bn(skip, l.out, name + ".skipbn");
        }
        x = g.relu(g.add(y, skip));
        break;
      }
      case LayerKind::GlobalMeanPool:
        x = g.mean(x, {1, 2});
        break;
      case LayerKind::Flatten:
        x = g.reshape(x, {N * S, shape_size(s)});
        break;
      case LayerKind::Dense:
        x = activate(g, b.dense(x, s[0], l.out, l.bias, Init::HeNormal, name), l.act);
        break;
    }
    s = next;
  }
  const std::size_t F = s[0];
  x = g.mean(g.reshape(x, {N, S, F}), {1});
  std::size_t width = F;
  for (std::size_t li = 0; li < arch.inference.size(); ++li) {
    const LayerSpec& l = arch.inference[li];
    x = activate(g, b.dense(x, width, l.out, l.bias, Init::HeNormal, "phi" + std::to_string(li)),
                 l.act);
    width = l.out;
  }
  x = b.dense(x, width, head_width(arch.head), true, Init::Small, "out");
  x = g.head(x, arch.head);
  g.set_output("theta", x);
  return g;
}

void apply_transform(InputTransform t, Tensor& x) {
  if (t == InputTransform::CubeRoot) {
    for (auto& v : x.values()) v = std::cbrt(v);
  }
}

bool element_matches(const ArchitectureSpec& arch, const Shape& e, bool flexible) {
  const Shape& a = arch.element_shape;
  if (e == a) return true;
  return flexible && spatially_flexible(arch) && e.size() == 3 && e[0] >= 1 && e[1] >= 1 &&
         e[2] == a[2];
}

// Number of set elements in x ([element...] or [S, element...]); fills elem.
std::size_t set_size_of(const ArchitectureSpec& arch, const Tensor& x, Shape* elem = nullptr,
                        bool flexible = false) {
  const std::size_t r = arch.element_shape.size();
  if (x.rank() == r && element_matches(arch, x.shape(), flexible)) {
    if (elem) *elem = x.shape();
    return 1;
  }
  if (x.rank() == r + 1) {
    const Shape e(x.shape().begin() + 1, x.shape().end());
    if (element_matches(arch, e, flexible)) {
      if (elem) *elem = e;
      return x.dim(0);
    }
  }
  fail(ErrorKind::ShapeMismatch, "input shape " + shape_str(x.shape()) +
                                     " does not match element shape " +
                                     shape_str(arch.element_shape));
}

}  // namespace

std::size_t EstimatorHandle::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : weights) {
    if (p->trainable) n += p->value.size();
  }
  return n;
}

void EstimatorHandle::validate() const {
  arch.validate();
  require(meta.H >= 1, ErrorKind::InvalidArgument, "estimator: metadata H must be >= 1");
  std::vector<ParamPtr> expected;
  Rng rng(0);
  ParamStore creating(&expected, &rng);
  build_with(arch, creating, 1, 1, false);
  require(expected.size() == weights.size(), ErrorKind::Format,
          "estimator: expected " + std::to_string(expected.size()) + " weight tensors, found " +
              std::to_string(weights.size()));
  ParamStore lookup(weights);
  for (const auto& p : expected) lookup.get(p->name, p->value.shape(), Init::Zeros, 1);
}

EstimatorHandle init_estimator(const ArchitectureSpec& arch, std::uint64_t seed) {
  EstimatorHandle h;
  h.arch = arch;
  Rng rng(split_seed(seed, 0x1417));
  ParamStore creating(&h.weights, &rng);
  build_with(arch, creating, 1, 1, false);
  return h;
}

EstimatorHandle clone_estimator(const EstimatorHandle& h) {
  EstimatorHandle c;
  c.arch = h.arch;
  c.meta = h.meta;
  for (const auto& p : h.weights) c.weights.push_back(make_param(p->name, p->value, p->trainable));
  return c;
}

void round_weights_to_float(EstimatorHandle& h) {
  for (auto& p : h.weights) {
    for (auto& v : p->value.values()) v = static_cast<double>(static_cast<float>(v));
  }
}

Graph build_network(const EstimatorHandle& h, std::size_t N, std::size_t S, bool training) {
  ParamStore lookup(h.weights);
  return build_with(h.arch, lookup, N, S, training);
}

Tensor network_forward(const EstimatorHandle& h, const Tensor& x, std::size_t N) {
  const Shape& e = h.arch.element_shape;
  require(N >= 1 && x.rank() == e.size() + 1 && x.dim(0) % N == 0, ErrorKind::ShapeMismatch,
          "network input " + shape_str(x.shape()) + " is not [N*S, " + shape_str(e) +
              "] with N=" + std::to_string(N));
  Shape elem;
  set_size_of(h.arch, x, &elem, true);
  const std::size_t S = x.dim(0) / N;
  ParamStore lookup(h.weights);
  Graph g = build_with(h.arch, lookup, N, S, false, &elem);
  Tensor in = x;
  apply_transform(h.arch.transform, in);
  g.forward({{"x", in}});
  return g.output("theta");
}

std::vector<double> deepsets_forward(const EstimatorHandle& h, const ReplicateSet& replicates) {
  require(!replicates.empty(), ErrorKind::InvalidArgument, "deepsets: empty replicate set");
  const Shape& first = replicates.front().shape();
  std::size_t total = 0;
  Shape elem;
  for (const auto& r : replicates) {
    require(r.shape() == first, ErrorKind::ShapeMismatch,
            "deepsets: replicate shapes differ (" + shape_str(first) + " vs " +
                shape_str(r.shape()) + ")");
    total += set_size_of(h.arch, r, &elem, true);
  }
  Shape s{total};
  s.insert(s.end(), elem.begin(), elem.end());
  Tensor x(s);
  std::size_t off = 0;
  for (const auto& r : replicates) {
    std::copy(r.values().begin(), r.values().end(), x.values().begin() + off);
    off += r.size();
  }
  return network_forward(h, x, 1).values();
}

Tensor global_mean_pool(const Tensor& features) {
  require(features.rank() == 3, ErrorKind::ShapeMismatch,
          "global_mean_pool: expected [h,w,c], got " + shape_str(features.shape()));
  require(features.dim(0) >= 1 && features.dim(1) >= 1, ErrorKind::InvalidArgument,
          "global_mean_pool: empty spatial extent");
  Graph g;
  auto x = g.input("x", {1, features.dim(0), features.dim(1), features.dim(2)});
  g.set_output("y", g.reshape(g.mean(x, {1, 2}), {1, 1, features.dim(2)}));
  g.forward({{"x", features.reshaped({1, features.dim(0), features.dim(1), features.dim(2)})}});
  return g.output("y");
}

// ---------------------------------------------------------------------------
// Training

void TrainingConfig::validate() const {
  require(batch >= 1, ErrorKind::Config, "training.batch must be >= 1");
  require(K >= batch, ErrorKind::Config, "training.K must be >= training.batch");
  require(patience >= 1, ErrorKind::Config, "training.patience must be >= 1");
  require(max_epochs >= 1, ErrorKind::Config, "training.max_epochs must be >= 1");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::Config,
          "training.learning_rate must be > 0");
  require(validation_fraction > 0.0 && validation_fraction < 1.0, ErrorKind::Config,
          "training.validation_fraction must be in (0, 1)");
  require(optimizer == "adam", ErrorKind::Config,
          "training.optimizer '" + optimizer + "' is not supported (use adam)");
  require(threads >= 1, ErrorKind::Config, "training.threads must be >= 1");
}

EarlyStopping::EarlyStopping(int patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  require(patience >= 1, ErrorKind::InvalidArgument, "early stopping: patience must be >= 1");
}

bool EarlyStopping::update(double value) {
  ++epoch_;
  if (value < best_) {
    best_ = value;
    best_epoch_ = epoch_;
    since_best_ = 0;
    return false;
  }
  return ++since_best_ >= patience_;
}

namespace {

struct Batch {
  Tensor x;
  std::vector<double> theta;  // N * p
};

Batch stack_pairs(const ArchitectureSpec& arch, const std::vector<TrainingPair>& pairs,
                  const std::vector<std::size_t>& idx, std::size_t begin, std::size_t n,
                  std::size_t S) {
  const std::size_t elem = shape_size(arch.element_shape);
  const std::size_t p = pairs[idx[begin]].theta.size();
  Shape s{n * S};
  s.insert(s.end(), arch.element_shape.begin(), arch.element_shape.end());
  Batch b{Tensor(s), std::vector<double>(n * p)};
  for (std::size_t i = 0; i < n; ++i) {
    const TrainingPair& tp = pairs[idx[begin + i]];
    std::copy(tp.x.values().begin(), tp.x.values().end(), b.x.values().begin() + i * S * elem);
    std::copy(tp.theta.begin(), tp.theta.end(), b.theta.begin() + i * p);
  }
  return b;
}

std::vector<TrainingPair> simulate_pairs(const ArchitectureSpec& arch, const PairSampler& sampler,
                                         const TrainingConfig& cfg, std::size_t& S) {
  std::vector<TrainingPair> pairs(cfg.K);
  auto work = [&](std::size_t t) {
    for (std::size_t k = t; k < cfg.K; k += cfg.threads) {
      Rng rng = make_rng(cfg.seed, k);
      pairs[k] = sampler(k, rng);
    }
  };
  if (cfg.threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < cfg.threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  const std::size_t p = arch.output_width();
  S = set_size_of(arch, pairs[0].x);
  for (std::size_t k = 0; k < cfg.K; ++k) {
    auto& tp = pairs[k];
    require(tp.theta.size() == p, ErrorKind::ShapeMismatch,
            "training pair " + std::to_string(k) + " has " + std::to_string(tp.theta.size()) +
                " parameters, head expects " + std::to_string(p));
    require(set_size_of(arch, tp.x) == S, ErrorKind::ShapeMismatch,
            "training pair " + std::to_string(k) + " has a different set size");
    apply_transform(arch.transform, tp.x);
  }
  return pairs;
}

double batch_loss(const LossSpec& loss, const Tensor& est, const std::vector<double>& theta,
                  std::size_t n, std::size_t p, std::vector<double>* seed) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += nbe::loss(loss, theta.data() + i * p, est.data() + i * p, p);
    if (seed) {
      loss_gradient(loss, theta.data() + i * p, est.data() + i * p, p, seed->data() + i * p);
    }
  }
  if (seed) {
    for (auto& v : *seed) v /= static_cast<double>(n);
  }
  return total / static_cast<double>(n);
}

double evaluate_transformed(const EstimatorHandle& h, const LossSpec& loss,
                            const std::vector<TrainingPair>& pairs,
                            const std::vector<std::size_t>& idx, std::size_t S,
                            std::size_t batch) {
  const std::size_t p = h.arch.output_width();
  double total = 0.0;
  std::map<std::size_t, Graph> graphs;
  for (std::size_t b0 = 0; b0 < idx.size(); b0 += batch) {
    const std::size_t n = std::min(batch, idx.size() - b0);
    Batch b = stack_pairs(h.arch, pairs, idx, b0, n, S);
    auto it = graphs.find(n);
    if (it == graphs.end()) it = graphs.emplace(n, build_network(h, n, S, false)).first;
    it->second.forward({{"x", b.x}});
    total += batch_loss(loss, it->second.output("theta"), b.theta, n, p, nullptr) * n;
  }
  return total / static_cast<double>(idx.size());
}

}  // namespace

double evaluate_loss(const EstimatorHandle& h, const LossSpec& loss,
                     const std::vector<TrainingPair>& pairs, std::size_t batch) {
  require(!pairs.empty(), ErrorKind::InvalidArgument, "evaluate_loss: no pairs");
  std::vector<TrainingPair> t = pairs;
  const std::size_t S = set_size_of(h.arch, t[0].x);
  for (auto& tp : t) apply_transform(h.arch.transform, tp.x);
  std::vector<std::size_t> idx(t.size());
  std::iota(idx.begin(), idx.end(), 0);
  return evaluate_transformed(h, loss, t, idx, S, batch);
}

EstimatorHandle train(const ArchitectureSpec& arch, const LossSpec& loss,
                      const PairSampler& sampler, const TrainingConfig& cfg,
                      EstimatorMetadata meta) {
  cfg.validate();
  arch.validate();
  loss.validate();
  const std::size_t n_val =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.K * cfg.validation_fraction)));
  require(cfg.K > n_val && cfg.K - n_val >= cfg.batch, ErrorKind::Config,
          "training.K too small for the batch size after holding out validation data");
  const std::size_t n_train = cfg.K - n_val;

  std::size_t S = 1;
  const std::vector<TrainingPair> pairs = simulate_pairs(arch, sampler, cfg, S);
  const std::size_t p = arch.output_width();

  EstimatorHandle h = init_estimator(arch, cfg.init_seed.value_or(cfg.seed));
  h.meta = std::move(meta);
  h.meta.loss = loss;
  h.meta.history.clear();
  Graph g = build_network(h, cfg.batch, S, true);
  g.set_input_gradients(false);

  struct Moments {
    std::vector<double> m, v;
  };
  std::map<std::string, Moments> adam;
  for (const auto& w : h.weights) {
    if (w->trainable) adam[w->name] = {std::vector<double>(w->value.size(), 0.0),
                                       std::vector<double>(w->value.size(), 0.0)};
  }
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long step = 0;

  std::vector<std::size_t> train_idx(n_train), val_idx(n_val);
  std::iota(train_idx.begin(), train_idx.end(), 0);
  std::iota(val_idx.begin(), val_idx.end(), n_train);
  Rng shuffle_rng = make_rng(cfg.seed, 0x5ull << 40);

  EarlyStopping stopper(cfg.patience);
  EstimatorHandle best = clone_estimator(h);
  std::vector<double> seed(cfg.batch * p);
  const std::size_t batches = n_train / cfg.batch;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng);
    double train_total = 0.0;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      Batch b = stack_pairs(arch, pairs, train_idx, bi * cfg.batch, cfg.batch, S);
      g.forward({{"x", b.x}});
      const double l = batch_loss(loss, g.output("theta"), b.theta, cfg.batch, p, &seed);
      if (!std::isfinite(l)) {
        std::ostringstream msg;
        msg << "non-finite training loss in epoch " << epoch << ", batch " << bi
            << " (training pairs";
        for (std::size_t i = 0; i < cfg.batch; ++i) msg << ' ' << train_idx[bi * cfg.batch + i];
        msg << ")";
        fail(ErrorKind::Numerical, msg.str());
      }
      train_total += l;
      Gradients grads = g.backward(Tensor({cfg.batch, p}, seed));
      ++step;
      const double c1 = 1.0 - std::pow(b1, step), c2 = 1.0 - std::pow(b2, step);
      for (auto& w : h.weights) {
        if (!w->trainable) continue;
        const Tensor& gr = grads.params.at(w->name);
        Moments& mo = adam[w->name];
        double* v = w->value.data();
        for (std::size_t i = 0; i < gr.size(); ++i) {
          mo.m[i] = b1 * mo.m[i] + (1.0 - b1) * gr[i];
          mo.v[i] = b2 * mo.v[i] + (1.0 - b2) * gr[i] * gr[i];
          v[i] -= cfg.learning_rate * (mo.m[i] / c1) / (std::sqrt(mo.v[i] / c2) + eps);
        }
      }
      for (const auto& st : g.batch_stats()) {
        double* rm = st.running_mean->value.data();
        double* rv = st.running_var->value.data();
        for (std::size_t c = 0; c < st.mean.size(); ++c) {
          rm[c] = (1.0 - kBnMomentum) * rm[c] + kBnMomentum * st.mean[c];
          rv[c] = (1.0 - kBnMomentum) * rv[c] + kBnMomentum * st.var[c];
        }
      }
    }
    const double val = evaluate_transformed(h, loss, pairs, val_idx, S, 64);
    require(std::isfinite(val), ErrorKind::Numerical,
            "non-finite validation loss in epoch " + std::to_string(epoch));
    h.meta.history.push_back({epoch, train_total / batches, val});
    if (cfg.verbose) {
      std::fprintf(stderr, "epoch %d train %.6f validation %.6f\n", epoch, train_total / batches,
                   val);
    }
    const bool improved = val < stopper.best();
    const bool stop = stopper.update(val);
    if (improved) {
      for (std::size_t i = 0; i < h.weights.size(); ++i) best.weights[i]->value = h.weights[i]->value;
    }
    if (stop) break;
  }
  best.meta = h.meta;
  best.meta.best_epoch = stopper.best_epoch();
  round_weights_to_float(best);
  return best;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json arch_to_json(const ArchitectureSpec& a) {
  auto layers = [](const std::vector<LayerSpec>& ls) {
    json arr = json::array();
    for (const auto& l : ls) {
      arr.push_back({{"kind", layer_name(l.kind)}, {"out", l.out}, {"kernel", l.kernel},
                     {"stride", l.stride}, {"pad", l.pad}, {"bias", l.bias},
                     {"act", activation_name(l.act)}});
    }
    return arr;
  };
  json head = json::array();
  for (const auto& s : a.head) {
    const char* kind = s.kind == HeadKind::Identity   ? "identity"
                       : s.kind == HeadKind::Softplus ? "softplus"
                       : s.kind == HeadKind::Bounded  ? "bounded"
                                                      : "correlation";
    head.push_back({{"kind", kind}, {"dim", s.dim}, {"lo", s.lo}, {"hi", s.hi}});
  }
  return {{"element_shape", a.element_shape}, {"transform", transform_name(a.transform)},
          {"summary", layers(a.summary)},     {"inference", layers(a.inference)},
          {"head", head}};
}

ArchitectureSpec arch_from_json(const json& j) {
  ArchitectureSpec a;
  a.element_shape = j.at("element_shape").get<Shape>();
  a.transform = parse_transform(j.at("transform").get<std::string>());
  auto layers = [](const json& arr) {
    std::vector<LayerSpec> ls;
    for (const auto& l : arr) {
      LayerSpec s;
      s.kind = parse_layer_kind(l.at("kind").get<std::string>());
      s.out = l.at("out").get<std::size_t>();
      s.kernel = l.at("kernel").get<std::size_t>();
      s.stride = l.at("stride").get<std::size_t>();
      s.pad = l.at("pad").get<std::size_t>();
      s.bias = l.at("bias").get<bool>();
      s.act = parse_activation(l.at("act").get<std::string>());
      ls.push_back(s);
    }
    return ls;
  };
  a.summary = layers(j.at("summary"));
  a.inference = layers(j.at("inference"));
  for (const auto& s : j.at("head")) {
    HeadSegment h;
    const std::string kind = s.at("kind").get<std::string>();
    if (kind == "identity") h.kind = HeadKind::Identity;
    else if (kind == "softplus") h.kind = HeadKind::Softplus;
    else if (kind == "bounded") h.kind = HeadKind::Bounded;
    else if (kind == "correlation") h.kind = HeadKind::Correlation;
    else fail(ErrorKind::Unsupported, "unsupported head kind '" + kind + "'");
    h.dim = s.at("dim").get<std::size_t>();
    h.lo = s.at("lo").get<double>();
    h.hi = s.at("hi").get<double>();
    a.head.push_back(h);
  }
  return a;
}

json meta_to_json(const EstimatorMetadata& m) {
  json hist = json::array();
  for (const auto& e : m.history) hist.push_back({e.epoch, e.train, e.validation});
  const LossSpec& l = m.loss;
  return {{"variant", m.variant},
          {"model", m.model},
          {"loss",
           {{"kind", loss_name(l.kind)}, {"kappa", l.kappa}, {"beta", l.beta}, {"delta", l.delta},
            {"rho", l.rho}, {"alpha", l.alpha}, {"norm", l.norm == Norm::L1 ? "l1" : "euclidean"}}},
          {"H", m.H},
          {"prior", m.prior_digest},
          {"best_epoch", m.best_epoch},
          {"history", hist}};
}

EstimatorMetadata meta_from_json(const json& j) {
  EstimatorMetadata m;
  m.variant = j.at("variant").get<std::string>();
  m.model = j.at("model").get<std::string>();
  const json& l = j.at("loss");
  m.loss.kind = parse_loss_kind(l.at("kind").get<std::string>());
  m.loss.kappa = l.at("kappa").get<double>();
  m.loss.beta = l.at("beta").get<double>();
  m.loss.delta = l.at("delta").get<double>();
  m.loss.rho = l.at("rho").get<double>();
  m.loss.alpha = l.at("alpha").get<double>();
  m.loss.norm = l.at("norm").get<std::string>() == "l1" ? Norm::L1 : Norm::Euclidean;
  m.H = j.at("H").get<std::size_t>();
  m.prior_digest = j.at("prior").get<std::string>();
  m.best_epoch = j.at("best_epoch").get<int>();
  for (const auto& e : j.at("history")) {
    m.history.push_back({e.at(0).get<int>(), e.at(1).get<double>(), e.at(2).get<double>()});
  }
  return m;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& s, std::size_t end) : s_(s), end_(end) {}
  void need(std::size_t n, const char* what) {
    require(pos_ + n <= end_, ErrorKind::Format,
            std::string("truncated checkpoint while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& s_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::string& s, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(n)));
}

}  // namespace

// Layout: magic, u32 version, u64 total length, u64 header length, JSON
// header, u32 record count, records (u32 name length, name, u8 trainable,
// u32 rank, u64 dims, float32 LE values), u32 CRC-32 of everything before it.
std::string save_checkpoint(const EstimatorHandle& h) {
  h.validate();
  const std::string header =
      json{{"format", "nbe-checkpoint"}, {"architecture", arch_to_json(h.arch)},
           {"metadata", meta_to_json(h.meta)}}
          .dump();
  std::string s(kMagic, sizeof(kMagic));
  put_u32(s, kCheckpointVersion);
  const std::size_t length_at = s.size();
  put_u64(s, 0);
  put_u64(s, header.size());
  s += header;
  put_u32(s, static_cast<std::uint32_t>(h.weights.size()));
  for (const auto& p : h.weights) {
    put_u32(s, static_cast<std::uint32_t>(p->name.size()));
    s += p->name;
    s.push_back(p->trainable ? 1 : 0);
    put_u32(s, static_cast<std::uint32_t>(p->value.rank()));
    for (auto d : p->value.shape()) put_u64(s, d);
    for (double v : p->value.values()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(s, bits);
    }
  }
  const std::uint64_t total = s.size() + 4;
  for (int i = 0; i < 8; ++i) s[length_at + i] = static_cast<char>((total >> (8 * i)) & 0xff);
  put_u32(s, crc_of(s, s.size()));
  return s;
}

EstimatorHandle load_checkpoint(const std::string& bytes) {
  Reader pre(bytes, bytes.size());
  const std::string magic = pre.bytes(sizeof(kMagic), "magic");
  require(magic == std::string(kMagic, sizeof(kMagic)), ErrorKind::Format,
          "not a checkpoint (bad magic)");
  const std::uint32_t version = pre.u32("version");
  require(version == kCheckpointVersion, ErrorKind::Format,
          "unsupported checkpoint version " + std::to_string(version) + " (expected " +
              std::to_string(kCheckpointVersion) + ")");
  const std::uint64_t total = pre.u64("length");
  require(bytes.size() >= total, ErrorKind::Format,
          "truncated checkpoint: " + std::to_string(bytes.size()) + " of " +
              std::to_string(total) + " bytes");
  require(bytes.size() == total, ErrorKind::Format, "trailing bytes after checkpoint");
  Reader tail(bytes, bytes.size());
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[body + i])) << (8 * i);
  require(stored == crc_of(bytes, body), ErrorKind::Format, "checkpoint checksum mismatch");

  Reader r(bytes, body);
  r.bytes(sizeof(kMagic) + 4 + 8, "preamble");
  const std::uint64_t header_len = r.u64("header length");
  json header;
  try {
    header = json::parse(r.bytes(header_len, "header"));
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed checkpoint header: ") + e.what());
  }
  EstimatorHandle h;
  try {
    h.arch = arch_from_json(header.at("architecture"));
    h.meta = meta_from_json(header.at("metadata"));
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed checkpoint header: ") + e.what());
  }
  const std::uint32_t count = r.u32("record count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.bytes(r.u32("name length"), "record name");
    const bool trainable = r.bytes(1, "record flags")[0] != 0;
    const std::uint32_t rank = r.u32("rank");
    require(rank >= 1 && rank <= 8, ErrorKind::Format, "record '" + name + "' has invalid rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u64("dimension");
    const std::size_t n = shape_size(shape);
    r.need(4 * n, "record values");
    Tensor t(shape);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t bits = r.u32("value");
      float f;
      std::memcpy(&f, &bits, 4);
      t[i] = f;
    }
    h.weights.push_back(make_param(name, std::move(t), trainable));
  }
  require(r.pos() == body, ErrorKind::Format, "unexpected bytes after checkpoint records");
  h.validate();
  return h;
}

void save_checkpoint_file(const EstimatorHandle& h, const std::string& path) {
  const std::string s = save_checkpoint(h);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::InvalidArgument, "cannot write '" + path + "'");
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
  require(static_cast<bool>(out), ErrorKind::InvalidArgument, "failed writing '" + path + "'");
}

EstimatorHandle load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::InvalidArgument, "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_checkpoint(ss.str());
}

}  // namespace nbe
