#include "nbe/model_gauss.hpp"

#include <cmath>
#include <random>

#include "nbe/error.hpp"

namespace nbe {

void GaussVarianceSpec::validate() const {
  require(n >= 1, ErrorKind::Config, "gaussian-variance: n must be >= 1");
  require(prior_shape > 0.0 && prior_rate > 0.0 && std::isfinite(prior_shape) &&
              std::isfinite(prior_rate),
          ErrorKind::Config, "gaussian-variance: prior shape and rate must be > 0");
}

double gaussian_variance_map(const std::vector<double>& z, double a, double b) {
  require(!z.empty(), ErrorKind::InvalidArgument, "gaussian_variance_map: empty data");
  require(a > 0.0 && b > 0.0, ErrorKind::InvalidArgument,
          "gaussian_variance_map: prior shape and rate must be > 0");
  double ss = 0.0;
  for (double v : z) ss += v * v;
  return (b + 0.5 * ss) / (a + 0.5 * static_cast<double>(z.size()) + 1.0);
}

GaussVarianceModel::GaussVarianceModel(GaussVarianceSpec spec) : spec_(spec) {
  spec_.validate();
  prior_.blocks = {PriorBlock::invgamma("sigma2", spec_.prior_shape, spec_.prior_rate)};
}

Tensor GaussVarianceModel::simulate(const std::vector<double>& theta, Rng& rng) const {
  require(theta.size() == 1 && theta[0] > 0.0 && std::isfinite(theta[0]),
          ErrorKind::InvalidArgument, "gaussian-variance: theta must be one positive variance");
  std::normal_distribution<double> norm(0.0, std::sqrt(theta[0]));
  Tensor z({spec_.n, 1});
  for (auto& v : z.values()) v = norm(rng);
  return z;
}

ReplicateSet GaussVarianceModel::conditional_simulate(const std::vector<double>& theta,
                                                      const IncompleteField& field,
                                                      std::size_t H, Rng& rng,
                                                      ChainState*) const {
  field.validate();
  require(field.values.shape() == field_shape(), ErrorKind::ShapeMismatch,
          "gaussian-variance: field shape " + shape_str(field.values.shape()) +
              " does not match " + shape_str(field_shape()));
  ReplicateSet out;
  out.reserve(H);
  for (std::size_t h = 0; h < H; ++h) {
    Tensor z = simulate(theta, rng);
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (field.observed[i]) z[i] = field.values[i];
    }
    out.push_back(std::move(z));
  }
  return out;
}

}  // namespace nbe
