#include "nbe/missingness.hpp"

#include <cmath>
#include <limits>

#include "nbe/error.hpp"

namespace nbe {

std::size_t IncompleteField::observed_count() const {
  std::size_t n = 0;
  for (auto o : observed) n += o ? 1 : 0;
  return n;
}

bool IncompleteField::fully_observed() const { return observed_count() == observed.size(); }

void IncompleteField::validate() const {
  require(observed.size() == values.size(), ErrorKind::ShapeMismatch,
          "field mask has " + std::to_string(observed.size()) + " entries for " +
              std::to_string(values.size()) + " values");
  for (auto o : observed) {
    require(o == 0 || o == 1, ErrorKind::InvalidArgument, "field mask must be binary");
  }
}

bool IncompleteField::operator==(const IncompleteField& other) const {
  if (values.shape() != other.values.shape() || observed != other.observed ||
      fill != other.fill) {
    return false;
  }
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (observed[i] && values[i] != other.values[i]) return false;
  }
  return true;
}

IncompleteField fully_observed(const Tensor& values, double fill) {
  return {values, std::vector<std::uint8_t>(values.size(), 1), fill};
}

const char* missing_name(MissingKind kind) {
  return kind == MissingKind::MCAR ? "mcar" : "micb";
}

MissingKind parse_missing_kind(const std::string& name) {
  if (name == "mcar" || name == "MCAR") return MissingKind::MCAR;
  if (name == "micb" || name == "MICB") return MissingKind::MICB;
  fail(ErrorKind::Config, "unknown missingness kind '" + name + "'");
}

void MissingnessModel::validate() const {
  require(lo >= 0.0 && hi < 1.0 && lo <= hi, ErrorKind::Config,
          "missingness proportion must satisfy 0 <= lo <= hi < 1");
}

std::pair<std::size_t, std::size_t> micb_block(std::size_t h, std::size_t w, std::size_t area,
                                               double aspect) {
  std::pair<std::size_t, std::size_t> best{0, 0};
  std::size_t best_gap = std::numeric_limits<std::size_t>::max();
  double best_aspect_err = std::numeric_limits<double>::infinity();
  for (std::size_t a = 1; a <= h; ++a) {
    for (std::size_t b = 1; b <= w; ++b) {
      const double r = static_cast<double>(a) / static_cast<double>(b);
      if (r < 0.5 || r > 2.0) continue;
      const std::size_t ab = a * b;
      const std::size_t gap = ab > area ? ab - area : area - ab;
      if (gap > 1) continue;
      const double aerr = std::abs(std::log(r / aspect));
      if (gap < best_gap || (gap == best_gap && aerr < best_aspect_err)) {
        best = {a, b};
        best_gap = gap;
        best_aspect_err = aerr;
      }
    }
  }
  require(best.first > 0, ErrorKind::InvalidArgument,
          "no block of area " + std::to_string(area) + " (+-1) with aspect in [1/2,2] fits a " +
              std::to_string(h) + "x" + std::to_string(w) + " grid");
  return best;
}

IncompleteField apply_missingness(const MissingnessModel& model, const Tensor& complete,
                                  Rng& rng, double fill) {
  model.validate();
  require(complete.all_finite(), ErrorKind::InvalidArgument,
          "apply_missingness: complete data must be finite");
  const double q = model.lo == model.hi ? model.lo
                                        : model.lo + (model.hi - model.lo) * uniform01(rng);
  const std::size_t n = complete.size();
  IncompleteField f = fully_observed(complete, fill);
  if (q == 0.0) return f;
  if (model.kind == MissingKind::MCAR) {
    for (;;) {
      for (std::size_t i = 0; i < n; ++i) f.observed[i] = uniform01(rng) < q ? 0 : 1;
      if (f.observed_count() > 0) break;
    }
  } else {
    require(complete.rank() == 2, ErrorKind::ShapeMismatch,
            "MICB needs a 2-D grid, got " + shape_str(complete.shape()));
    const std::size_t h = complete.dim(0), w = complete.dim(1);
    const auto area = static_cast<std::size_t>(std::llround(q * static_cast<double>(n)));
    if (area == 0) return f;
    // log-uniform aspect in [1/2, 2]
    const double aspect = std::exp(std::log(0.5) + std::log(4.0) * uniform01(rng));
    const auto [bh, bw] = micb_block(h, w, area, aspect);
    require(bh * bw < n, ErrorKind::InvalidArgument,
            "MICB proportion leaves no observed entries");
    const std::size_t r0 = static_cast<std::size_t>(uniform01(rng) * double(h - bh + 1));
    const std::size_t c0 = static_cast<std::size_t>(uniform01(rng) * double(w - bw + 1));
    for (std::size_t r = r0; r < r0 + bh; ++r)
      for (std::size_t c = c0; c < c0 + bw; ++c) f.observed[r * w + c] = 0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!f.observed[i]) f.values[i] = fill;
  }
  return f;
}

std::pair<Tensor, Tensor> encode_masked(const IncompleteField& field) {
  field.validate();
  Tensor U(field.values.shape());
  Tensor W(field.values.shape());
  for (std::size_t i = 0; i < field.size(); ++i) {
    const double wi = field.observed[i] ? 1.0 : 0.0;
    W[i] = wi;
    U[i] = field.observed[i] ? field.values[i] : field.fill;
  }
  return {U, W};
}

IncompleteField decode_masked(const Tensor& U, const Tensor& W, double c) {
  require(U.shape() == W.shape(), ErrorKind::ShapeMismatch,
          "decode_masked: U " + shape_str(U.shape()) + " vs W " + shape_str(W.shape()));
  IncompleteField f{U, std::vector<std::uint8_t>(U.size()), c};
  for (std::size_t i = 0; i < U.size(); ++i) {
    require(W[i] == 0.0 || W[i] == 1.0, ErrorKind::InvalidArgument,
            "decode_masked: W must be binary, found " + std::to_string(W[i]));
    f.observed[i] = W[i] == 1.0 ? 1 : 0;
    if (!f.observed[i]) f.values[i] = c;
  }
  return f;
}

}  // namespace nbe
