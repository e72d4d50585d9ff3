#include "nbe/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "nbe/error.hpp"
#include "nbe/simd.hpp"

namespace nbe {

ParamPtr make_param(std::string name, Tensor value, bool trainable) {
  auto p = std::make_shared<Parameter>();
  p->name = std::move(name);
  p->value = std::move(value);
  p->trainable = trainable;
  return p;
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Param: return "param";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::MatMul: return "matmul";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Softplus: return "softplus";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Mean: return "mean";
    case OpKind::Sum: return "sum";
    case OpKind::Reshape: return "reshape";
    case OpKind::Concat: return "concat";
    case OpKind::BatchNorm: return "batch_norm";
    case OpKind::Head: return "head";
  }
  return "?";
}

std::size_t HeadSegment::width() const {
  return kind == HeadKind::Correlation ? dim * (dim - 1) / 2 : 1;
}

std::size_t head_width(const std::vector<HeadSegment>& segments) {
  std::size_t w = 0;
  for (const auto& s : segments) w += s.width();
  return w;
}

// ---------------------------------------------------------------------------
// Correlation bijection: z = tanh(x) are canonical partial correlations,
// L is built row by row so every row has unit norm, R = L L'.

namespace {

struct Dual {
  double v = 0.0;
  double d = 0.0;
};
inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual dtanh(Dual a) {
  const double t = std::tanh(a.v);
  return {t, (1.0 - t * t) * a.d};
}
inline Dual dsqrt(Dual a) {
  const double s = std::sqrt(std::max(a.v, 0.0));
  return {s, s > 0.0 ? a.d / (2.0 * s) : 0.0};
}
inline double dtanh(double a) { return std::tanh(a); }
inline double dsqrt(double a) { return std::sqrt(std::max(a, 0.0)); }

// Partial correlations are kept strictly inside (-1, 1) so that saturated
// tanh inputs still give a positive-definite matrix.
constexpr double kCorrShrink = 1.0 - 1e-6;

template <class T>
void corr_lower(const T* x, std::size_t d, T* out, std::vector<T>& L) {
  L.assign(d * d, T{});
  L[0] = T{1.0};
  std::size_t idx = 0;
  for (std::size_t i = 1; i < d; ++i) {
    T rem{1.0};
    for (std::size_t j = 0; j < i; ++j) {
      const T z = dtanh(x[idx++]) * T{kCorrShrink};
      const T lij = z * dsqrt(rem);
      L[i * d + j] = lij;
      rem = rem - lij * lij;
    }
    L[i * d + i] = dsqrt(rem);
  }
  idx = 0;
  for (std::size_t i = 1; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      T s{};
      for (std::size_t k = 0; k <= j; ++k) s = s + L[i * d + k] * L[j * d + k];
      out[idx++] = s;
    }
  }
}

}  // namespace

std::vector<double> correlation_from_reals(const double* x, std::size_t d) {
  require(d >= 2, ErrorKind::InvalidArgument, "correlation block needs d >= 2");
  std::vector<double> out(d * (d - 1) / 2);
  std::vector<double> L;
  corr_lower(x, d, out.data(), L);
  return out;
}

std::vector<double> correlation_matrix_from_reals(const double* x, std::size_t d) {
  const auto lower = correlation_from_reals(x, d);
  std::vector<double> R(d * d, 0.0);
  std::size_t idx = 0;
  for (std::size_t i = 0; i < d; ++i) {
    R[i * d + i] = 1.0;
    for (std::size_t j = 0; j < i; ++j) {
      R[i * d + j] = R[j * d + i] = lower[idx++];
    }
  }
  return R;
}

// ---------------------------------------------------------------------------

struct Graph::Node {
  OpKind kind = OpKind::Input;
  std::vector<Var> in;
  Shape shape;
  std::string label;

  ParamPtr param;
  Tensor constant;

  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t axis = 0;
  // Reduction: output index for each input element.
  std::vector<std::uint32_t> reduce_map;
  std::size_t reduce_count = 1;

  ParamPtr running_mean;
  ParamPtr running_var;
  bool training = false;
  double eps = 1e-5;
  std::vector<double> bn_mean;
  std::vector<double> bn_invstd;
  std::size_t bn_stats_slot = 0;

  std::vector<HeadSegment> segments;

  Tensor value;
};

Graph::Graph() = default;
Graph::~Graph() = default;
Graph::Graph(Graph&&) noexcept = default;
Graph& Graph::operator=(Graph&&) noexcept = default;

Graph::Var Graph::push(Node node) {
  for (Var v : node.in) {
    require(v < nodes_.size(), ErrorKind::InvalidArgument,
            std::string(op_name(node.kind)) + ": input refers to unknown node");
  }
  nodes_.push_back(std::move(node));
  forward_done_ = false;
  return nodes_.size() - 1;
}

const Shape& Graph::shape(Var v) const { return nodes_.at(v).shape; }
std::size_t Graph::size() const { return nodes_.size(); }

std::string Graph::describe(Var v) const {
  const Node& n = nodes_.at(v);
  std::string s = "node " + std::to_string(v) + " (" + op_name(n.kind);
  if (!n.label.empty()) s += " '" + n.label + "'";
  return s + ", shape " + shape_str(n.shape) + ")";
}

Graph::Var Graph::input(const std::string& name, Shape shape) {
  require(!inputs_.count(name), ErrorKind::InvalidArgument, "duplicate input '" + name + "'");
  Node n;
  n.kind = OpKind::Input;
  n.label = name;
  n.value = Tensor(shape);
  n.shape = std::move(shape);
  Var v = push(std::move(n));
  inputs_[name] = v;
  return v;
}

Graph::Var Graph::parameter(const ParamPtr& p) {
  require(p != nullptr, ErrorKind::InvalidArgument, "null parameter");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::Param && nodes_[i].param == p) return i;
    if (nodes_[i].kind == OpKind::Param && nodes_[i].param->name == p->name) {
      fail(ErrorKind::InvalidArgument, "two parameters named '" + p->name + "'");
    }
  }
  Node n;
  n.kind = OpKind::Param;
  n.label = p->name;
  n.shape = p->value.shape();
  n.param = p;
  params_.push_back(p);
  return push(std::move(n));
}

Graph::Var Graph::constant(Tensor value, const std::string& label) {
  Node n;
  n.kind = OpKind::Constant;
  n.label = label;
  n.shape = value.shape();
  n.constant = std::move(value);
  return push(std::move(n));
}

namespace {

bool is_trailing(const Shape& a, const Shape& b) {
  if (b == Shape{1}) return true;
  if (b.size() > a.size()) return false;
  return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

}  // namespace

Graph::Var Graph::add(Var a, Var b) {
  require(is_trailing(shape(a), shape(b)), ErrorKind::ShapeMismatch,
          "add: " + describe(b) + " does not broadcast against " + describe(a));
  Node n;
  n.kind = OpKind::Add;
  n.in = {a, b};
  n.shape = shape(a);
  return push(std::move(n));
}

Graph::Var Graph::mul(Var a, Var b) {
  require(is_trailing(shape(a), shape(b)), ErrorKind::ShapeMismatch,
          "mul: " + describe(b) + " does not broadcast against " + describe(a));
  Node n;
  n.kind = OpKind::Mul;
  n.in = {a, b};
  n.shape = shape(a);
  return push(std::move(n));
}

Graph::Var Graph::matmul(Var a, Var b) {
  const Shape& sa = shape(a);
  const Shape& sb = shape(b);
  require(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0], ErrorKind::ShapeMismatch,
          "matmul: incompatible " + describe(a) + " and " + describe(b));
  Node n;
  n.kind = OpKind::MatMul;
  n.in = {a, b};
  n.shape = {sa[0], sb[1]};
  return push(std::move(n));
}

Graph::Var Graph::conv2d(Var x, Var w, std::size_t stride, std::size_t pad) {
  const Shape& sx = shape(x);
  const Shape& sw = shape(w);
  require(sx.size() == 4 && sw.size() == 4 && sw[2] == sx[3], ErrorKind::ShapeMismatch,
          "conv2d: incompatible " + describe(x) + " and kernel " + describe(w));
  require(stride >= 1, ErrorKind::InvalidArgument, "conv2d: stride must be >= 1");
  require(sx[1] + 2 * pad >= sw[0] && sx[2] + 2 * pad >= sw[1], ErrorKind::ShapeMismatch,
          "conv2d: kernel larger than padded input at " + describe(x));
  Node n;
  n.kind = OpKind::Conv2d;
  n.in = {x, w};
  n.stride = stride;
  n.pad = pad;
  n.shape = {sx[0], (sx[1] + 2 * pad - sw[0]) / stride + 1,
             (sx[2] + 2 * pad - sw[1]) / stride + 1, sw[3]};
  return push(std::move(n));
}

#define NBE_UNARY(fn, K)                \
  Graph::Var Graph::fn(Var x) {         \
    Node n;                             \
    n.kind = OpKind::K;                 \
    n.in = {x};                         \
    n.shape = shape(x);                 \
    return push(std::move(n));          \
  }
NBE_UNARY(tanh, Tanh)
NBE_UNARY(relu, Relu)
NBE_UNARY(softplus, Softplus)
NBE_UNARY(exp, Exp)
NBE_UNARY(log, Log)
#undef NBE_UNARY

namespace {

// Output shape and per-element index map for reducing `axes` of `in`.
Shape reduce_setup(const Shape& in, std::vector<std::size_t> axes,
                   std::vector<std::uint32_t>& map, std::size_t& count) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  require(!axes.empty(), ErrorKind::InvalidArgument, "reduction needs at least one axis");
  for (std::size_t a : axes) {
    require(a < in.size(), ErrorKind::ShapeMismatch,
            "reduction axis " + std::to_string(a) + " out of range for " + shape_str(in));
  }
  std::vector<bool> reduced(in.size(), false);
  for (std::size_t a : axes) reduced[a] = true;
  Shape out;
  count = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (reduced[i]) {
      count *= in[i];
    } else {
      out.push_back(in[i]);
    }
  }
  // Strides of the kept axes in the output.
  std::vector<std::size_t> ostride(in.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    if (!reduced[i]) {
      ostride[i] = s;
      s *= in[i];
    }
  }
  const std::size_t total = shape_size(in);
  map.resize(total);
  std::vector<std::size_t> idx(in.size(), 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t o = 0;
    for (std::size_t i = 0; i < in.size(); ++i) o += idx[i] * ostride[i];
    map[flat] = static_cast<std::uint32_t>(o);
    for (std::size_t i = in.size(); i-- > 0;) {
      if (++idx[i] < in[i]) break;
      idx[i] = 0;
    }
  }
  if (out.empty()) out = {1};
  return out;
}

}  // namespace

Graph::Var Graph::mean(Var x, std::vector<std::size_t> axes) {
  Node n;
  n.kind = OpKind::Mean;
  n.in = {x};
  n.shape = reduce_setup(shape(x), std::move(axes), n.reduce_map, n.reduce_count);
  return push(std::move(n));
}

Graph::Var Graph::sum(Var x, std::vector<std::size_t> axes) {
  Node n;
  n.kind = OpKind::Sum;
  n.in = {x};
  n.shape = reduce_setup(shape(x), std::move(axes), n.reduce_map, n.reduce_count);
  return push(std::move(n));
}

Graph::Var Graph::sum_all(Var x) {
  std::vector<std::size_t> axes(shape(x).size());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return sum(x, axes);
}

Graph::Var Graph::reshape(Var x, Shape s) {
  require(shape_size(s) == shape_size(shape(x)), ErrorKind::ShapeMismatch,
          "reshape: cannot view " + describe(x) + " as " + shape_str(s));
  Node n;
  n.kind = OpKind::Reshape;
  n.in = {x};
  n.shape = std::move(s);
  return push(std::move(n));
}

Graph::Var Graph::concat(const std::vector<Var>& xs, std::size_t axis) {
  require(!xs.empty(), ErrorKind::InvalidArgument, "concat of nothing");
  Shape out = shape(xs[0]);
  require(axis < out.size(), ErrorKind::ShapeMismatch, "concat: axis out of range");
  out[axis] = 0;
  for (Var v : xs) {
    const Shape& s = shape(v);
    bool ok = s.size() == out.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != out[i]) ok = false;
    }
    require(ok, ErrorKind::ShapeMismatch, "concat: " + describe(v) + " does not match");
    out[axis] += s[axis];
  }
  Node n;
  n.kind = OpKind::Concat;
  n.in = xs;
  n.axis = axis;
  n.shape = std::move(out);
  return push(std::move(n));
}

Graph::Var Graph::batch_norm(Var x, Var gamma, Var beta, const ParamPtr& running_mean,
                             const ParamPtr& running_var, bool training, double eps) {
  const Shape& sx = shape(x);
  const std::size_t c = sx.back();
  require(shape(gamma) == Shape{c} && shape(beta) == Shape{c}, ErrorKind::ShapeMismatch,
          "batch_norm: scale/shift must have shape [" + std::to_string(c) + "] for " +
              describe(x));
  require(running_mean && running_var && running_mean->value.size() == c &&
              running_var->value.size() == c,
          ErrorKind::ShapeMismatch, "batch_norm: running statistics mismatch " + describe(x));
  Node n;
  n.kind = OpKind::BatchNorm;
  n.in = {x, gamma, beta};
  n.shape = sx;
  n.running_mean = running_mean;
  n.running_var = running_var;
  n.training = training;
  n.eps = eps;
  if (training) {
    n.bn_stats_slot = bn_stats_.size();
    bn_stats_.push_back({running_mean, running_var, {}, {}});
  }
  return push(std::move(n));
}

Graph::Var Graph::head(Var x, std::vector<HeadSegment> segments) {
  const Shape& sx = shape(x);
  require(sx.size() == 2 && sx[1] == head_width(segments), ErrorKind::ShapeMismatch,
          "head: " + describe(x) + " does not match head width " +
              std::to_string(head_width(segments)));
  for (const auto& s : segments) {
    if (s.kind == HeadKind::Correlation) {
      require(s.dim >= 2, ErrorKind::InvalidArgument, "head: correlation block needs d >= 2");
    }
    if (s.kind == HeadKind::Bounded) {
      require(s.hi > s.lo, ErrorKind::InvalidArgument, "head: bounded segment needs hi > lo");
    }
  }
  Node n;
  n.kind = OpKind::Head;
  n.in = {x};
  n.shape = sx;
  n.segments = std::move(segments);
  return push(std::move(n));
}

void Graph::set_output(const std::string& name, Var v) {
  require(v < nodes_.size(), ErrorKind::InvalidArgument, "output refers to unknown node");
  for (auto& o : outputs_) {
    if (o.first == name) {
      o.second = v;
      return;
    }
  }
  outputs_.emplace_back(name, v);
}

const Tensor& Graph::value(Var v) const {
  require(forward_done_, ErrorKind::InvalidArgument, "value() before forward()");
  const Node& n = nodes_.at(v);
  if (n.kind == OpKind::Param) return n.param->value;
  if (n.kind == OpKind::Constant) return n.constant;
  return n.value;
}

const Tensor& Graph::output(const std::string& name) const {
  for (const auto& o : outputs_) {
    if (o.first == name) return value(o.second);
  }
  fail(ErrorKind::InvalidArgument, "no output named '" + name + "'");
}

// ---------------------------------------------------------------------------
// forward

namespace {

inline double softplus_fn(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double sigmoid_fn(double x) { return 0.5 * (1.0 + std::tanh(0.5 * x)); }

struct ConvGeom {
  std::size_t n, h, w, c, kh, kw, o, ho, wo, stride, pad;
  std::size_t patch() const { return kh * kw * c; }
  std::size_t pixels() const { return ho * wo; }
};

// Rows of `cols` (one per output pixel of images [img0, img0+count)).
void im2col(const ConvGeom& g, const double* x, std::size_t img0, std::size_t count,
            double* cols) {
  const std::size_t P = g.patch();
  for (std::size_t b = 0; b < count; ++b) {
    const double* xi = x + (img0 + b) * g.h * g.w * g.c;
    for (std::size_t oy = 0; oy < g.ho; ++oy) {
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        double* row = cols + ((b * g.ho + oy) * g.wo + ox) * P;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            double* dst = row + (ky * g.kw + kx) * g.c;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) ||
                ix >= static_cast<std::ptrdiff_t>(g.w)) {
              std::fill(dst, dst + g.c, 0.0);
            } else {
              const double* src = xi + (static_cast<std::size_t>(iy) * g.w +
                                        static_cast<std::size_t>(ix)) * g.c;
              std::copy(src, src + g.c, dst);
            }
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const double* cols, std::size_t img0, std::size_t count,
                double* gx) {
  const std::size_t P = g.patch();
  for (std::size_t b = 0; b < count; ++b) {
    double* gi = gx + (img0 + b) * g.h * g.w * g.c;
    for (std::size_t oy = 0; oy < g.ho; ++oy) {
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        const double* row = cols + ((b * g.ho + oy) * g.wo + ox) * P;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            double* dst = gi + (static_cast<std::size_t>(iy) * g.w +
                                static_cast<std::size_t>(ix)) * g.c;
            const double* src = row + (ky * g.kw + kx) * g.c;
            for (std::size_t c = 0; c < g.c; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

// Images per im2col chunk; keeps the column buffer around 4k rows.
std::size_t conv_chunk(const ConvGeom& g) {
  return std::max<std::size_t>(1, 4096 / std::max<std::size_t>(1, g.pixels()));
}

void transpose(const double* a, std::size_t rows, std::size_t cols, double* out) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
  }
}

}  // namespace

void Graph::eval(Node& n) {
  auto in = [&](std::size_t i) -> const Tensor& { return value(n.in[i]); };
  switch (n.kind) {
    case OpKind::Input:
    case OpKind::Param:
    case OpKind::Constant:
      return;
    default:
      break;
  }
  if (n.value.shape() != n.shape) n.value = Tensor(n.shape);
  double* y = n.value.data();
  const std::size_t N = n.value.size();
  switch (n.kind) {
    case OpKind::Add:
    case OpKind::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t bn = b.size();
      if (bn == 1 && N > 1) {
        const double s = b[0];
        const double* x = a.data();
        if (n.kind == OpKind::Add) {
          for (std::size_t i = 0; i < N; ++i) y[i] = x[i] + s;
        } else {
          for (std::size_t i = 0; i < N; ++i) y[i] = x[i] * s;
        }
        break;
      }
      for (std::size_t off = 0; off < N; off += bn) {
        if (n.kind == OpKind::Add) {
          simd::add(a.data() + off, b.data(), y + off, bn);
        } else {
          simd::mul(a.data() + off, b.data(), y + off, bn);
        }
      }
      break;
    }
    case OpKind::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t m = a.dim(0), k = a.dim(1), nn = b.dim(1);
      simd::gemm(m, nn, k, a.data(), k, b.data(), nn, y, nn, false);
      break;
    }
    case OpKind::Conv2d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(1), w.dim(3),
                 n.shape[1], n.shape[2], n.stride, n.pad};
      const std::size_t chunk = conv_chunk(g);
      std::vector<double> cols(chunk * g.pixels() * g.patch());
      for (std::size_t i0 = 0; i0 < g.n; i0 += chunk) {
        const std::size_t cnt = std::min(chunk, g.n - i0);
        im2col(g, x.data(), i0, cnt, cols.data());
        simd::gemm(cnt * g.pixels(), g.o, g.patch(), cols.data(), g.patch(), w.data(), g.o,
                   y + i0 * g.pixels() * g.o, g.o, false);
      }
      break;
    }
    case OpKind::Tanh: {
      const double* x = in(0).data();
      for (std::size_t i = 0; i < N; ++i) y[i] = std::tanh(x[i]);
      break;
    }
    case OpKind::Relu:
      simd::relu(in(0).data(), y, N);
      break;
    case OpKind::Softplus: {
      const double* x = in(0).data();
      for (std::size_t i = 0; i < N; ++i) y[i] = softplus_fn(x[i]);
      break;
    }
    case OpKind::Exp: {
      const double* x = in(0).data();
      for (std::size_t i = 0; i < N; ++i) y[i] = std::exp(x[i]);
      break;
    }
    case OpKind::Log: {
      const double* x = in(0).data();
      for (std::size_t i = 0; i < N; ++i) y[i] = std::log(x[i]);
      break;
    }
    case OpKind::Mean:
    case OpKind::Sum: {
      const Tensor& x = in(0);
      std::fill(y, y + N, 0.0);
      for (std::size_t i = 0; i < x.size(); ++i) y[n.reduce_map[i]] += x[i];
      if (n.kind == OpKind::Mean) {
        const double s = 1.0 / static_cast<double>(n.reduce_count);
        for (std::size_t i = 0; i < N; ++i) y[i] *= s;
      }
      break;
    }
    case OpKind::Reshape:
      std::copy(in(0).data(), in(0).data() + N, y);
      break;
    case OpKind::Concat: {
      std::size_t outer = 1;
      for (std::size_t i = 0; i < n.axis; ++i) outer *= n.shape[i];
      const std::size_t out_inner = N / outer;
      std::size_t col = 0;
      for (std::size_t k = 0; k < n.in.size(); ++k) {
        const Tensor& x = in(k);
        const std::size_t inner = x.size() / outer;
        for (std::size_t o = 0; o < outer; ++o) {
          std::copy(x.data() + o * inner, x.data() + (o + 1) * inner, y + o * out_inner + col);
        }
        col += inner;
      }
      break;
    }
    case OpKind::BatchNorm: {
      const Tensor& x = in(0);
      const double* gamma = in(1).data();
      const double* beta = in(2).data();
      const std::size_t C = n.shape.back();
      const std::size_t R = N / C;
      n.bn_mean.assign(C, 0.0);
      n.bn_invstd.assign(C, 0.0);
      if (n.training) {
        std::vector<double> var(C, 0.0);
        simd::column_sums(x.data(), R, C, n.bn_mean.data());
        for (std::size_t c = 0; c < C; ++c) n.bn_mean[c] /= static_cast<double>(R);
        for (std::size_t r = 0; r < R; ++r) {
          for (std::size_t c = 0; c < C; ++c) {
            const double d = x[r * C + c] - n.bn_mean[c];
            var[c] += d * d;
          }
        }
        auto& st = bn_stats_[n.bn_stats_slot];
        st.mean = n.bn_mean;
        st.var.resize(C);
        for (std::size_t c = 0; c < C; ++c) {
          st.var[c] = R > 1 ? var[c] / static_cast<double>(R - 1) : 0.0;
          n.bn_invstd[c] = 1.0 / std::sqrt(var[c] / static_cast<double>(R) + n.eps);
        }
      } else {
        const Tensor& rm = n.running_mean->value;
        const Tensor& rv = n.running_var->value;
        for (std::size_t c = 0; c < C; ++c) {
          n.bn_mean[c] = rm[c];
          n.bn_invstd[c] = 1.0 / std::sqrt(rv[c] + n.eps);
        }
      }
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
          const double xh = (x[r * C + c] - n.bn_mean[c]) * n.bn_invstd[c];
          y[r * C + c] = gamma[c] * xh + beta[c];
        }
      }
      break;
    }
    case OpKind::Head: {
      const Tensor& x = in(0);
      const std::size_t rows = n.shape[0];
      const std::size_t W = n.shape[1];
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * W;
        double* yr = y + r * W;
        std::size_t col = 0;
        for (const auto& s : n.segments) {
          switch (s.kind) {
            case HeadKind::Identity:
              yr[col] = xr[col];
              break;
            case HeadKind::Softplus:
              yr[col] = s.lo + softplus_fn(xr[col]);
              break;
            case HeadKind::Bounded:
              yr[col] = s.lo + (s.hi - s.lo) * sigmoid_fn(xr[col]);
              break;
            case HeadKind::Correlation: {
              std::vector<double> L;
              corr_lower(xr + col, s.dim, yr + col, L);
              break;
            }
          }
          col += s.width();
        }
      }
      break;
    }
    default:
      break;
  }
}

std::map<std::string, Tensor> Graph::forward(const std::map<std::string, Tensor>& inputs) {
  require(!outputs_.empty(), ErrorKind::InvalidArgument, "graph has no outputs");
  for (const auto& [name, t] : inputs) {
    auto it = inputs_.find(name);
    require(it != inputs_.end(), ErrorKind::InvalidArgument,
            "forward: graph declares no input named '" + name + "'");
    require(t.shape() == nodes_[it->second].shape, ErrorKind::ShapeMismatch,
            "forward: got shape " + shape_str(t.shape()) + " for " + describe(it->second));
  }
  for (const auto& [name, v] : inputs_) {
    auto it = inputs.find(name);
    require(it != inputs.end(), ErrorKind::InvalidArgument,
            "forward: missing value for " + describe(v));
    nodes_[v].value = it->second;
  }
  for (const auto& p : params_) {
    for (auto& n : nodes_) {
      if (n.kind == OpKind::Param && n.param == p) {
        require(p->value.shape() == n.shape, ErrorKind::ShapeMismatch,
                "forward: parameter '" + p->name + "' changed shape to " +
                    shape_str(p->value.shape()));
      }
    }
  }
  forward_done_ = true;
  for (auto& n : nodes_) eval(n);
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : outputs_) out[name] = value(v);
  return out;
}

// ---------------------------------------------------------------------------
// backward

Tensor& Graph::grad_of(std::vector<Tensor>& g, Var v) {
  if (g[v].empty()) g[v] = Tensor(nodes_[v].shape, 0.0);
  return g[v];
}

void Graph::grad(Node& n, std::vector<Tensor>& g) {
  const Var self = static_cast<Var>(&n - nodes_.data());
  if (g[self].empty()) return;
  const Tensor& gy = g[self];
  const double* dy = gy.data();
  const std::size_t N = gy.size();
  auto in = [&](std::size_t i) -> const Tensor& { return value(n.in[i]); };
  auto wants = [&](std::size_t i) {
    const Node& src = nodes_[n.in[i]];
    if (src.kind == OpKind::Input) return input_grads_;
    if (src.kind == OpKind::Param) return src.param->trainable;
    return src.kind != OpKind::Constant;
  };

  switch (n.kind) {
    case OpKind::Input:
    case OpKind::Param:
    case OpKind::Constant:
      break;
    case OpKind::Add: {
      if (wants(0)) simd::axpy(1.0, dy, grad_of(g, n.in[0]).data(), N);
      if (wants(1)) {
        Tensor& gb = grad_of(g, n.in[1]);
        const std::size_t bn = gb.size();
        simd::column_sums(dy, N / bn, bn, gb.data());
      }
      break;
    }
    case OpKind::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t bn = b.size();
      if (wants(0)) {
        double* ga = grad_of(g, n.in[0]).data();
        for (std::size_t off = 0; off < N; off += bn) {
          for (std::size_t j = 0; j < bn; ++j) ga[off + j] += dy[off + j] * b[j];
        }
      }
      if (wants(1)) {
        double* gb = grad_of(g, n.in[1]).data();
        for (std::size_t off = 0; off < N; off += bn) {
          for (std::size_t j = 0; j < bn; ++j) gb[j] += dy[off + j] * a[off + j];
        }
      }
      break;
    }
    case OpKind::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t m = a.dim(0), k = a.dim(1), nn = b.dim(1);
      if (wants(0)) {
        // dA = dY B'
        std::vector<double> bt(k * nn);
        transpose(b.data(), k, nn, bt.data());
        simd::gemm(m, k, nn, dy, nn, bt.data(), k, grad_of(g, n.in[0]).data(), k, true);
      }
      if (wants(1)) {
        // dB = A' dY
        simd::gemm_tn(k, nn, m, a.data(), k, dy, nn, grad_of(g, n.in[1]).data(), nn, true);
      }
      break;
    }
    case OpKind::Conv2d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      ConvGeom geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(1), w.dim(3),
                   n.shape[1], n.shape[2], n.stride, n.pad};
      const std::size_t P = geo.patch();
      const std::size_t chunk = conv_chunk(geo);
      std::vector<double> cols(chunk * geo.pixels() * P);
      std::vector<double> wt;
      double* gw = wants(1) ? grad_of(g, n.in[1]).data() : nullptr;
      double* gx = wants(0) ? grad_of(g, n.in[0]).data() : nullptr;
      if (gx) {
        wt.resize(P * geo.o);
        transpose(w.data(), P, geo.o, wt.data());
      }
      for (std::size_t i0 = 0; i0 < geo.n; i0 += chunk) {
        const std::size_t cnt = std::min(chunk, geo.n - i0);
        const std::size_t rows = cnt * geo.pixels();
        const double* dyc = dy + i0 * geo.pixels() * geo.o;
        if (gw) {
          im2col(geo, x.data(), i0, cnt, cols.data());
          simd::gemm_tn(P, geo.o, rows, cols.data(), P, dyc, geo.o, gw, geo.o, true);
        }
        if (gx) {
          simd::gemm(rows, P, geo.o, dyc, geo.o, wt.data(), P, cols.data(), P, false);
          col2im_add(geo, cols.data(), i0, cnt, gx);
        }
      }
      break;
    }
    case OpKind::Tanh: {
      if (!wants(0)) break;
      double* gx = grad_of(g, n.in[0]).data();
      const double* y = n.value.data();
      for (std::size_t i = 0; i < N; ++i) gx[i] += dy[i] * (1.0 - y[i] * y[i]);
      break;
    }
    case OpKind::Relu:
      if (wants(0)) simd::relu_backward(in(0).data(), dy, grad_of(g, n.in[0]).data(), N);
      break;
    case OpKind::Softplus: {
      if (!wants(0)) break;
      double* gx = grad_of(g, n.in[0]).data();
      const double* x = in(0).data();
      for (std::size_t i = 0; i < N; ++i) gx[i] += dy[i] * sigmoid_fn(x[i]);
      break;
    }
    case OpKind::Exp: {
      if (!wants(0)) break;
      double* gx = grad_of(g, n.in[0]).data();
      const double* y = n.value.data();
      for (std::size_t i = 0; i < N; ++i) gx[i] += dy[i] * y[i];
      break;
    }
    case OpKind::Log: {
      if (!wants(0)) break;
      double* gx = grad_of(g, n.in[0]).data();
      const double* x = in(0).data();
      for (std::size_t i = 0; i < N; ++i) gx[i] += dy[i] / x[i];
      break;
    }
    case OpKind::Mean:
    case OpKind::Sum: {
      if (!wants(0)) break;
      Tensor& gxt = grad_of(g, n.in[0]);
      double* gx = gxt.data();
      const double s =
          n.kind == OpKind::Mean ? 1.0 / static_cast<double>(n.reduce_count) : 1.0;
      for (std::size_t i = 0; i < gxt.size(); ++i) gx[i] += s * dy[n.reduce_map[i]];
      break;
    }
    case OpKind::Reshape:
      if (wants(0)) simd::axpy(1.0, dy, grad_of(g, n.in[0]).data(), N);
      break;
    case OpKind::Concat: {
      std::size_t outer = 1;
      for (std::size_t i = 0; i < n.axis; ++i) outer *= n.shape[i];
      const std::size_t out_inner = N / outer;
      std::size_t col = 0;
      for (std::size_t k = 0; k < n.in.size(); ++k) {
        const std::size_t inner = shape_size(nodes_[n.in[k]].shape) / outer;
        if (wants(k)) {
          double* gx = grad_of(g, n.in[k]).data();
          for (std::size_t o = 0; o < outer; ++o) {
            simd::axpy(1.0, dy + o * out_inner + col, gx + o * inner, inner);
          }
        }
        col += inner;
      }
      break;
    }
    case OpKind::BatchNorm: {
      const Tensor& x = in(0);
      const double* gamma = in(1).data();
      const std::size_t C = n.shape.back();
      const std::size_t R = N / C;
      std::vector<double> sum_dy(C, 0.0), sum_dy_xh(C, 0.0);
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
          const double xh = (x[r * C + c] - n.bn_mean[c]) * n.bn_invstd[c];
          sum_dy[c] += dy[r * C + c];
          sum_dy_xh[c] += dy[r * C + c] * xh;
        }
      }
      if (wants(1)) {
        double* gg = grad_of(g, n.in[1]).data();
        for (std::size_t c = 0; c < C; ++c) gg[c] += sum_dy_xh[c];
      }
      if (wants(2)) {
        double* gb = grad_of(g, n.in[2]).data();
        for (std::size_t c = 0; c < C; ++c) gb[c] += sum_dy[c];
      }
      if (wants(0)) {
        double* gx = grad_of(g, n.in[0]).data();
        const double invR = 1.0 / static_cast<double>(R);
        for (std::size_t r = 0; r < R; ++r) {
          for (std::size_t c = 0; c < C; ++c) {
            const double k = gamma[c] * n.bn_invstd[c];
            if (n.training) {
              const double xh = (x[r * C + c] - n.bn_mean[c]) * n.bn_invstd[c];
              gx[r * C + c] +=
                  k * (dy[r * C + c] - invR * sum_dy[c] - xh * invR * sum_dy_xh[c]);
            } else {
              gx[r * C + c] += k * dy[r * C + c];
            }
          }
        }
      }
      break;
    }
    case OpKind::Head: {
      if (!wants(0)) break;
      const Tensor& x = in(0);
      double* gx = grad_of(g, n.in[0]).data();
      const std::size_t rows = n.shape[0];
      const std::size_t W = n.shape[1];
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * W;
        const double* dyr = dy + r * W;
        double* gxr = gx + r * W;
        std::size_t col = 0;
        for (const auto& s : n.segments) {
          switch (s.kind) {
            case HeadKind::Identity:
              gxr[col] += dyr[col];
              break;
            case HeadKind::Softplus:
              gxr[col] += dyr[col] * sigmoid_fn(xr[col]);
              break;
            case HeadKind::Bounded: {
              const double sg = sigmoid_fn(xr[col]);
              gxr[col] += dyr[col] * (s.hi - s.lo) * sg * (1.0 - sg);
              break;
            }
            case HeadKind::Correlation: {
              const std::size_t m = s.width();
              std::vector<Dual> xd(m), yd(m), L;
              for (std::size_t j = 0; j < m; ++j) xd[j].v = xr[col + j];
              for (std::size_t j = 0; j < m; ++j) {
                xd[j].d = 1.0;
                corr_lower(xd.data(), s.dim, yd.data(), L);
                double acc = 0.0;
                for (std::size_t i = 0; i < m; ++i) acc += dyr[col + i] * yd[i].d;
                gxr[col + j] += acc;
                xd[j].d = 0.0;
              }
              break;
            }
          }
          col += s.width();
        }
      }
      break;
    }
  }
}

Gradients Graph::backward(const std::map<std::string, Tensor>& seeds) {
  require(forward_done_, ErrorKind::InvalidArgument, "backward() called before forward()");
  std::vector<Tensor> g(nodes_.size());
  for (const auto& [name, seed] : seeds) {
    Var v = nodes_.size();
    for (const auto& o : outputs_) {
      if (o.first == name) v = o.second;
    }
    require(v < nodes_.size(), ErrorKind::InvalidArgument,
            "backward: no output named '" + name + "'");
    require(seed.shape() == nodes_[v].shape, ErrorKind::ShapeMismatch,
            "backward: seed shape " + shape_str(seed.shape()) + " does not match " +
                describe(v));
    simd::axpy(1.0, seed.data(), grad_of(g, v).data(), seed.size());
  }
  for (std::size_t i = nodes_.size(); i-- > 0;) grad(nodes_[i], g);

  Gradients out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.kind == OpKind::Param && n.param->trainable) {
      out.params[n.param->name] = g[i].empty() ? Tensor(n.shape, 0.0) : std::move(g[i]);
    } else if (n.kind == OpKind::Input) {
      out.inputs[n.label] = g[i].empty() ? Tensor(n.shape, 0.0) : std::move(g[i]);
    }
  }
  return out;
}

Gradients Graph::backward(const Tensor& seed) {
  require(outputs_.size() == 1, ErrorKind::InvalidArgument,
          "backward(seed) needs exactly one output");
  return backward(std::map<std::string, Tensor>{{outputs_[0].first, seed}});
}

double finite_diff_check(Graph& graph, const std::map<std::string, Tensor>& inputs,
                         double step) {
  require(step > 0.0, ErrorKind::InvalidArgument, "finite_diff_check: step must be > 0");
  auto out = graph.forward(inputs);
  require(out.size() == 1 && out.begin()->second.size() == 1, ErrorKind::ShapeMismatch,
          "finite_diff_check: graph output must be a single scalar");
  const Gradients grads = graph.backward(Tensor(out.begin()->second.shape(), 1.0));
  auto eval = [&]() { return graph.forward(inputs).begin()->second.item(); };
  double worst = 0.0;
  for (const auto& p : graph.parameters()) {
    if (!p->trainable) continue;
    const Tensor& ad = grads.params.at(p->name);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + step;
      const double fp = eval();
      p->value[i] = orig - step;
      const double fm = eval();
      p->value[i] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      worst = std::max(worst, std::abs(ad[i] - fd) / (std::abs(fd) + 1e-8));
    }
  }
  graph.forward(inputs);
  return worst;
}

}  // namespace nbe
