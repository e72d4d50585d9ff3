#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nbe/rng.hpp"
#include "nbe/tensor.hpp"

namespace nbe {

/// Values on a grid ([h, w]) or vector ([n]) with an observation mask.
/// Missing entries hold the fill constant.
struct IncompleteField {
  Tensor values;
  std::vector<std::uint8_t> observed;  // 1 = observed
  double fill = 0.0;

  std::size_t size() const { return values.size(); }
  std::size_t observed_count() const;
  bool fully_observed() const;
  void validate() const;
  /// Equal masks, fill, and observed values; missing entries are ignored.
  bool operator==(const IncompleteField& other) const;
};

IncompleteField fully_observed(const Tensor& values, double fill = 0.0);

enum class MissingKind { MCAR, MICB };

const char* missing_name(MissingKind kind);
MissingKind parse_missing_kind(const std::string& name);

/// Missing proportion fixed (lo == hi) or drawn uniformly in [lo, hi] per field.
struct MissingnessModel {
  MissingKind kind = MissingKind::MCAR;
  double lo = 0.2;
  double hi = 0.2;

  static MissingnessModel fixed(MissingKind kind, double q) { return {kind, q, q}; }
  static MissingnessModel range(MissingKind kind, double lo, double hi) {
    return {kind, lo, hi};
  }
  void validate() const;
  bool operator==(const MissingnessModel&) const = default;
};

IncompleteField apply_missingness(const MissingnessModel& model, const Tensor& complete,
                                  Rng& rng, double fill = 0.0);

/// Height and width of a rectangle whose area is within one cell of `area`,
/// aspect ratio in [1/2, 2], closest to `aspect` among the best area matches.
std::pair<std::size_t, std::size_t> micb_block(std::size_t h, std::size_t w, std::size_t area,
                                               double aspect);

/// U = Z*W + c(1-W), W = observation indicator.
std::pair<Tensor, Tensor> encode_masked(const IncompleteField& field);
IncompleteField decode_masked(const Tensor& U, const Tensor& W, double c = 0.0);

}  // namespace nbe
