#include "nbe/model.hpp"

namespace nbe {

ReplicateSet DataModel::simulate_replicates(const std::vector<double>& theta, std::size_t H,
                                            Rng& rng) const {
  ReplicateSet out;
  out.reserve(H);
  for (std::size_t h = 0; h < H; ++h) out.push_back(simulate(theta, rng));
  return out;
}

}  // namespace nbe
