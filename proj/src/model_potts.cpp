#include "nbe/model_potts.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "nbe/error.hpp"

namespace nbe {

namespace {

void check_labels(const LabelGrid& g, int Q) {
  require(Q >= 2 && Q <= 255, ErrorKind::InvalidArgument, "potts: Q must be in [2, 255]");
  require(g.height >= 1 && g.width >= 1 && g.labels.size() == g.height * g.width,
          ErrorKind::InvalidArgument, "potts: malformed label grid");
  for (std::size_t i = 0; i < g.size(); ++i) {
    const int v = g.labels[i];
    require(v >= 1 && v <= Q, ErrorKind::InvalidArgument,
            "potts: label " + std::to_string(v) + " at site " + std::to_string(i) +
                " outside 1.." + std::to_string(Q));
  }
}

// Neighbour label counts for site (i, j); counts[q] for q = 1..Q.
template <typename F>
void for_neighbours(const LabelGrid& g, std::size_t i, std::size_t j, F&& f) {
  if (i > 0) f((i - 1) * g.width + j);
  if (i + 1 < g.height) f((i + 1) * g.width + j);
  if (j > 0) f(i * g.width + j - 1);
  if (j + 1 < g.width) f(i * g.width + j + 1);
}

// Draws a label from weights exp(beta * count_q), using a table exp(beta k), k = 0..4.
std::uint8_t draw_label(const LabelGrid& g, std::size_t i, std::size_t j, int Q,
                        const std::array<double, 5>& ebeta, Rng& rng) {
  std::array<int, 256> counts{};
  for_neighbours(g, i, j, [&](std::size_t n) { ++counts[g.labels[n]]; });
  double total = 0.0;
  std::array<double, 256> w{};
  for (int q = 1; q <= Q; ++q) {
    w[q] = ebeta[counts[q]];
    total += w[q];
  }
  double u = uniform01(rng) * total;
  for (int q = 1; q < Q; ++q) {
    u -= w[q];
    if (u < 0.0) return static_cast<std::uint8_t>(q);
  }
  return static_cast<std::uint8_t>(Q);
}

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

std::uint8_t uniform_label(int Q, Rng& rng) {
  return static_cast<std::uint8_t>(1 + static_cast<int>(uniform01(rng) * Q));
}

}  // namespace

LabelGrid labels_from_tensor(const Tensor& t, int Q) {
  require(t.rank() == 2, ErrorKind::ShapeMismatch,
          "potts: expected a rank-2 grid, got " + shape_str(t.shape()));
  LabelGrid g(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = t[i];
    require(v == std::round(v) && v >= 1.0 && v <= Q, ErrorKind::InvalidArgument,
            "potts: value " + std::to_string(v) + " at site " + std::to_string(i) +
                " is not a label in 1.." + std::to_string(Q));
    g.labels[i] = static_cast<std::uint8_t>(v);
  }
  return g;
}

Tensor labels_to_tensor(const LabelGrid& g) {
  Tensor t({g.height, g.width});
  for (std::size_t i = 0; i < g.size(); ++i) t[i] = g.labels[i];
  return t;
}

PottsSpec PottsSpec::ising(std::size_t h, std::size_t w) {
  PottsSpec s;
  s.height = h;
  s.width = w;
  s.prior.blocks = {PriorBlock::uniform("beta", 0.0, 1.5)};
  return s;
}

void PottsSpec::validate() const {
  require(height >= 1 && width >= 1, ErrorKind::Config, "potts: grid must be nonempty");
  require(Q >= 2 && Q <= 255, ErrorKind::Config, "potts: Q must be in [2, 255]");
  require(sw_sweeps >= 1, ErrorKind::Config, "potts: sw_sweeps must be >= 1");
  require(burn_in >= 0, ErrorKind::Config, "potts: burn_in must be >= 0");
  require(spacing >= 1, ErrorKind::Config, "potts: spacing must be >= 1");
  prior.validate();
  require(prior.dim() == 1, ErrorKind::Config, "potts: prior must have one component (beta)");
}

long potts_suffstat(const LabelGrid& g, int Q) {
  check_labels(g, Q);
  long s = 0;
  for (std::size_t i = 0; i < g.height; ++i) {
    for (std::size_t j = 0; j < g.width; ++j) {
      const std::uint8_t z = g.labels[i * g.width + j];
      for_neighbours(g, i, j, [&](std::size_t n) { s += g.labels[n] == z; });
    }
  }
  return s;
}

std::vector<double> potts_conditional(const LabelGrid& g, std::size_t site, double beta, int Q) {
  check_labels(g, Q);
  require(site < g.size(), ErrorKind::InvalidArgument, "potts: site out of range");
  std::vector<int> counts(Q + 1, 0);
  for_neighbours(g, site / g.width, site % g.width, [&](std::size_t n) { ++counts[g.labels[n]]; });
  // Shift by the max count for stability at large beta.
  const int cmax = *std::max_element(counts.begin() + 1, counts.end());
  std::vector<double> p(Q);
  double total = 0.0;
  for (int q = 1; q <= Q; ++q) {
    p[q - 1] = std::exp(beta * (counts[q] - cmax));
    total += p[q - 1];
  }
  for (auto& v : p) v /= total;
  return p;
}

double potts_log_normalizer_bruteforce(std::size_t height, std::size_t width, double beta,
                                       int Q) {
  require(Q >= 2 && Q <= 255, ErrorKind::InvalidArgument, "potts: Q must be in [2, 255]");
  const std::size_t n = height * width;
  require(n >= 1, ErrorKind::InvalidArgument, "potts: grid must be nonempty");
  const double logstates = static_cast<double>(n) * std::log(static_cast<double>(Q));
  require(logstates <= 20.0 * std::log(2.0) + 1e-12, ErrorKind::InvalidArgument,
          "potts: brute force needs Q^n <= 2^20 states (got " + std::to_string(Q) + "^" +
              std::to_string(n) + ")");
  std::size_t states = 1;
  for (std::size_t i = 0; i < n; ++i) states *= static_cast<std::size_t>(Q);

  // S ranges over 0..4n; tally how many labelings give each value.
  std::vector<double> tally(4 * n + 1, 0.0);
  LabelGrid g(height, width);
  for (std::size_t s = 0; s < states; ++s) {
    std::size_t r = s;
    for (std::size_t i = 0; i < n; ++i) {
      g.labels[i] = static_cast<std::uint8_t>(1 + r % Q);
      r /= Q;
    }
    tally[static_cast<std::size_t>(potts_suffstat(g, Q))] += 1.0;
  }
  double m = -INFINITY;
  for (std::size_t k = 0; k < tally.size(); ++k) {
    if (tally[k] > 0) m = std::max(m, beta * k / 2.0 + std::log(tally[k]));
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < tally.size(); ++k) {
    if (tally[k] > 0) acc += std::exp(beta * k / 2.0 + std::log(tally[k]) - m);
  }
  return m + std::log(acc);
}

double potts_log_likelihood_bruteforce(const LabelGrid& g, double beta, int Q) {
  check_labels(g, Q);
  const double logc = potts_log_normalizer_bruteforce(g.height, g.width, beta, Q);
  return beta * static_cast<double>(potts_suffstat(g, Q)) / 2.0 - logc;
}

namespace {

// Labelings counted by sufficient statistic: over all states and over the
// completions of `field`.
struct SuffstatTally {
  std::vector<double> all;
  std::vector<double> completions;
};

SuffstatTally tally_bruteforce(const IncompleteField& field, int Q) {
  field.validate();
  require(field.values.rank() == 2, ErrorKind::ShapeMismatch, "potts: field must be a 2-D grid");
  const std::size_t h = field.values.dim(0), w = field.values.dim(1), n = h * w;
  require(static_cast<double>(n) * std::log(static_cast<double>(Q)) <= 20.0 * std::log(2.0) + 1e-12,
          ErrorKind::InvalidArgument, "potts: brute force needs Q^n <= 2^20 states");
  std::size_t states = 1;
  for (std::size_t i = 0; i < n; ++i) states *= static_cast<std::size_t>(Q);
  SuffstatTally t{std::vector<double>(4 * n + 1, 0.0), std::vector<double>(4 * n + 1, 0.0)};
  LabelGrid g(h, w);
  for (std::size_t s = 0; s < states; ++s) {
    std::size_t r = s;
    bool consistent = true;
    for (std::size_t i = 0; i < n; ++i) {
      g.labels[i] = static_cast<std::uint8_t>(1 + r % Q);
      r /= Q;
      if (field.observed[i] && static_cast<double>(g.labels[i]) != field.values[i]) consistent = false;
    }
    const auto k = static_cast<std::size_t>(potts_suffstat(g, Q));
    t.all[k] += 1.0;
    if (consistent) t.completions[k] += 1.0;
  }
  return t;
}

double log_weighted_sum(const std::vector<double>& tally, double beta) {
  double m = -INFINITY;
  for (std::size_t k = 0; k < tally.size(); ++k)
    if (tally[k] > 0) m = std::max(m, beta * k / 2.0 + std::log(tally[k]));
  if (!std::isfinite(m)) return -INFINITY;
  double acc = 0.0;
  for (std::size_t k = 0; k < tally.size(); ++k)
    if (tally[k] > 0) acc += std::exp(beta * k / 2.0 + std::log(tally[k]) - m);
  return m + std::log(acc);
}

}  // namespace

double potts_observed_log_likelihood_bruteforce(const IncompleteField& field, double beta, int Q) {
  const SuffstatTally t = tally_bruteforce(field, Q);
  return log_weighted_sum(t.completions, beta) - log_weighted_sum(t.all, beta);
}

PottsMap potts_map_bruteforce(const PottsSpec& spec, const IncompleteField& field,
                              std::size_t grid) {
  spec.validate();
  require(grid >= 3, ErrorKind::InvalidArgument, "potts: MAP grid needs >= 3 points");
  const SuffstatTally t = tally_bruteforce(field, spec.Q);
  const PriorBlock& prior = spec.prior.blocks.at(0);
  const double lo = prior.lower();
  const double hi = std::isfinite(prior.upper()) ? prior.upper() : lo + 10.0;
  auto logpost = [&](double b) {
    const double lp = prior.log_density(&b);
    if (!std::isfinite(lp)) return -HUGE_VAL;
    return lp + log_weighted_sum(t.completions, b) - log_weighted_sum(t.all, b);
  };
  // Keep the scan strictly inside the support so open endpoints are safe.
  const double step = (hi - lo) / static_cast<double>(grid + 1);
  std::size_t best = 1;
  double best_v = -INFINITY;
  for (std::size_t i = 1; i <= grid; ++i) {
    const double v = logpost(lo + step * static_cast<double>(i));
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  double a = lo + step * static_cast<double>(best - 1), b = lo + step * static_cast<double>(best + 1);
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = logpost(c), fd = logpost(d);
  for (int it = 0; it < 100 && b - a > 1e-12; ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = logpost(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = logpost(d);
    }
  }
  const double mid = 0.5 * (a + b);
  PottsMap out{mid, logpost(mid)};
  const double grid_best = lo + step * static_cast<double>(best);
  if (best_v > out.log_posterior) out = {grid_best, best_v};
  return out;
}

void checkerboard_gibbs_sweep(LabelGrid& g, double beta, int Q,
                              const std::vector<std::uint8_t>* clamped, Rng& rng) {
  require(clamped == nullptr || clamped->size() == g.size(), ErrorKind::ShapeMismatch,
          "potts: clamp mask size does not match grid");
  std::array<double, 5> ebeta;
  for (int k = 0; k <= 4; ++k) ebeta[k] = std::exp(beta * k);
  for (std::size_t colour = 0; colour < 2; ++colour) {
    for (std::size_t i = 0; i < g.height; ++i) {
      for (std::size_t j = (i + colour) % 2; j < g.width; j += 2) {
        const std::size_t s = i * g.width + j;
        if (clamped && (*clamped)[s]) continue;
        g.labels[s] = draw_label(g, i, j, Q, ebeta, rng);
      }
    }
  }
}

void swendsen_wang_step(LabelGrid& g, double beta, int Q, Rng& rng) {
  const std::size_t n = g.size();
  const double p = -std::expm1(-beta);
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto bond = [&](std::size_t a, std::size_t b) {
    if (g.labels[a] != g.labels[b]) return;
    if (!(uniform01(rng) < p)) return;
    const std::size_t ra = find_root(parent, a), rb = find_root(parent, b);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  };
  for (std::size_t i = 0; i < g.height; ++i) {
    for (std::size_t j = 0; j < g.width; ++j) {
      const std::size_t s = i * g.width + j;
      if (j + 1 < g.width) bond(s, s + 1);
      if (i + 1 < g.height) bond(s, s + g.width);
    }
  }
  // Roots precede their members (min-index union), so one pass relabels.
  std::vector<std::uint8_t> fresh(n, 0);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t r = find_root(parent, s);
    if (r == s) fresh[s] = uniform_label(Q, rng);
    g.labels[s] = fresh[r];
  }
}

LabelGrid sample_potts(const PottsSpec& spec, double beta, int sweeps, Rng& rng) {
  LabelGrid g(spec.height, spec.width);
  for (auto& v : g.labels) v = uniform_label(spec.Q, rng);
  for (int s = 0; s < sweeps; ++s) swendsen_wang_step(g, beta, spec.Q, rng);
  return g;
}

ReplicateSet conditional_sample_potts(const PottsSpec& spec, double beta,
                                      const IncompleteField& field, std::size_t H, int burn_in,
                                      int spacing, Rng& rng, ChainState* state) {
  field.validate();
  require(field.values.shape() == Shape{spec.height, spec.width}, ErrorKind::ShapeMismatch,
          "potts: field shape " + shape_str(field.values.shape()) + " does not match grid");
  require(field.observed_count() >= 1, ErrorKind::InvalidArgument,
          "potts: conditional simulation needs at least one observed site");
  require(burn_in >= 0 && spacing >= 1, ErrorKind::InvalidArgument,
          "potts: burn_in must be >= 0 and spacing >= 1");

  ReplicateSet out;
  out.reserve(H);
  if (field.fully_observed()) {
    labels_from_tensor(field.values, spec.Q);  // validates labels
    for (std::size_t h = 0; h < H; ++h) out.push_back(field.values);
    return out;
  }

  LabelGrid g(spec.height, spec.width);
  const bool warm = state && state->valid && state->last.shape() == field.values.shape();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (field.observed[i]) {
      const double v = field.values[i];
      require(v == std::round(v) && v >= 1.0 && v <= spec.Q, ErrorKind::InvalidArgument,
              "potts: observed value at site " + std::to_string(i) + " is not a label");
      g.labels[i] = static_cast<std::uint8_t>(v);
    } else if (warm) {
      g.labels[i] = static_cast<std::uint8_t>(state->last[i]);
    } else {
      g.labels[i] = uniform_label(spec.Q, rng);
    }
  }
  for (int s = 0; s < burn_in; ++s) checkerboard_gibbs_sweep(g, beta, spec.Q, &field.observed, rng);
  for (std::size_t h = 0; h < H; ++h) {
    if (h > 0) {
      for (int s = 0; s < spacing; ++s) {
        checkerboard_gibbs_sweep(g, beta, spec.Q, &field.observed, rng);
      }
    }
    out.push_back(labels_to_tensor(g));
  }
  if (state) {
    state->last = out.back();
    state->valid = true;
  }
  return out;
}

double critical_beta(int Q) {
  require(Q >= 2, ErrorKind::InvalidArgument, "potts: Q must be >= 2");
  return std::log1p(std::sqrt(static_cast<double>(Q)));
}

PottsModel::PottsModel(PottsSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

Tensor PottsModel::simulate(const std::vector<double>& theta, Rng& rng) const {
  require(theta.size() == 1, ErrorKind::InvalidArgument, "potts: theta must be (beta)");
  return labels_to_tensor(sample_potts(spec_, theta[0], spec_.sw_sweeps, rng));
}

ReplicateSet PottsModel::conditional_simulate(const std::vector<double>& theta,
                                              const IncompleteField& field, std::size_t H,
                                              Rng& rng, ChainState* state) const {
  require(theta.size() == 1, ErrorKind::InvalidArgument, "potts: theta must be (beta)");
  return conditional_sample_potts(spec_, theta[0], field, H, spec_.burn_in, spec_.spacing, rng,
                                  state);
}

}  // namespace nbe
