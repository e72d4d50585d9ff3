#include "nbe/estimators.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>

#include "nbe/error.hpp"

namespace nbe {

namespace {

void check_field(const DataModel& model, const Shape& shape) {
  require(shape == model.field_shape(), ErrorKind::ShapeMismatch,
          model.name() + ": field shape " + shape_str(shape) + " does not match " +
              shape_str(model.field_shape()));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Tensor encode_complete(const DataModel& model, const Tensor& field) {
  check_field(model, field.shape());
  const Shape& s = model.field_shape();
  if (model.iid_rows()) return field;
  return field.reshaped({1, s[0], s[1], 1});
}

Tensor encode_incomplete(const DataModel& model, const IncompleteField& field) {
  check_field(model, field.values.shape());
  const auto [U, W] = encode_masked(field);
  const Shape& s = model.field_shape();
  if (model.iid_rows()) {
    const std::size_t T = s[0], d = s[1];
    Tensor x({T, 2 * d});
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < d; ++i) {
        x[t * 2 * d + i] = U[t * d + i];
        x[t * 2 * d + d + i] = W[t * d + i];
      }
    }
    return x;
  }
  Tensor x({1, s[0], s[1], 2});
  for (std::size_t i = 0; i < U.size(); ++i) {
    x[2 * i] = U[i];
    x[2 * i + 1] = W[i];
  }
  return x;
}

Tensor stack_elements(const std::vector<Tensor>& parts) {
  require(!parts.empty(), ErrorKind::InvalidArgument, "stack_elements: nothing to stack");
  const Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require(p.rank() == tail.size() + 1 && std::equal(tail.begin(), tail.end(), p.shape().begin() + 1),
            ErrorKind::ShapeMismatch, "stack_elements: inconsistent element shapes");
    rows += p.dim(0);
  }
  Shape s{rows};
  s.insert(s.end(), tail.begin(), tail.end());
  Tensor out(s);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.values().begin() + off);
    off += p.size();
  }
  return out;
}

ArchitectureSpec default_architecture(const DataModel& model, bool masked, std::size_t width) {
  const Shape s = model.field_shape();
  auto head = head_for_prior(model.prior());
  if (model.iid_rows()) {
    return vector_architecture(masked ? 2 * s[1] : s[1], std::move(head), width ? width : 64);
  }
  return grid_architecture(s[0], s[1], masked ? 2 : 1, std::move(head), width ? width : 8);
}

// ---------------------------------------------------------------------------

EstimatorHandle train_masking_nbe(const DataModel& model, const MissingnessModel& missing,
                                  const LossSpec& loss, const TrainingConfig& cfg,
                                  std::optional<ArchitectureSpec> arch) {
  missing.validate();
  const PriorSpec& prior = model.prior();
  PairSampler sampler = [&](std::size_t, Rng& rng) {
    TrainingPair tp;
    tp.theta = sample_prior(prior, rng);
    const Tensor z = model.simulate(tp.theta, rng);
    tp.x = encode_incomplete(model, apply_missingness(missing, z, rng));
    return tp;
  };
  EstimatorMetadata meta;
  meta.variant = "masking";
  meta.model = model.name();
  meta.H = 1;
  meta.prior_digest = prior.render();
  return train(arch ? *arch : default_architecture(model, true), loss, sampler, cfg, meta);
}

std::vector<double> estimate_masking(const EstimatorHandle& h, const DataModel& model,
                                     const IncompleteField& field) {
  field.validate();
  return network_forward(h, encode_incomplete(model, field), 1).values();
}

EstimatorHandle train_map_nbe(const DataModel& model, const LossSpec& loss, std::size_t H,
                              const TrainingConfig& cfg, std::optional<ArchitectureSpec> arch) {
  require(H >= 1, ErrorKind::Config, "map estimator: H must be >= 1");
  const PriorSpec powered = power_prior(model.prior(), static_cast<int>(H));
  PairSampler sampler = [&](std::size_t, Rng& rng) {
    TrainingPair tp;
    tp.theta = sample_prior(powered, rng);
    const ReplicateSet reps = model.simulate_replicates(tp.theta, H, rng);
    std::vector<Tensor> parts;
    parts.reserve(H);
    for (const auto& z : reps) parts.push_back(encode_complete(model, z));
    tp.x = stack_elements(parts);
    return tp;
  };
  EstimatorMetadata meta;
  meta.variant = "map";
  meta.model = model.name();
  meta.H = H;
  meta.prior_digest = model.prior().render();
  return train(arch ? *arch : default_architecture(model, false), loss, sampler, cfg, meta);
}

std::vector<double> estimate_complete(const EstimatorHandle& h, const DataModel& model,
                                      const ReplicateSet& replicates) {
  require(!replicates.empty(), ErrorKind::InvalidArgument, "estimate: no replicates");
  std::vector<Tensor> parts;
  parts.reserve(replicates.size());
  for (const auto& z : replicates) parts.push_back(encode_complete(model, z));
  return network_forward(h, stack_elements(parts), 1).values();
}

// ---------------------------------------------------------------------------

void EMConfig::validate() const {
  require(H >= 1, ErrorKind::Config, "em.H must be >= 1");
  require(max_iterations >= 1, ErrorKind::Config, "em.max_iterations must be >= 1");
  require(tolerance > 0.0 && std::isfinite(tolerance), ErrorKind::Config,
          "em.tolerance must be > 0");
  require(hits >= 1, ErrorKind::Config, "em.hits must be >= 1");
}

const char* em_status_name(EMStatus s) {
  switch (s) {
    case EMStatus::Converged: return "converged";
    case EMStatus::MaxIterations: return "max_iterations";
    case EMStatus::Failed: return "failed";
  }
  return "?";
}

EMResult neural_em(const EstimatorHandle& h, const DataModel& model,
                   const IncompleteField& field, const EMConfig& cfg, Rng& rng) {
  cfg.validate();
  field.validate();
  check_field(model, field.values.shape());
  require(field.observed_count() >= 1, ErrorKind::InvalidArgument,
          "em: field has no observed entries");
  EMResult r;
  std::vector<double> theta = cfg.init ? *cfg.init : prior_mean(model.prior());
  require(theta.size() == model.prior().dim(), ErrorKind::Config,
          "em.init has " + std::to_string(theta.size()) + " entries, model has " +
              std::to_string(model.prior().dim()) + " parameters");
  r.trace.push_back(theta);
  ChainState chain;
  int hits = 0;
  for (int l = 1; l <= cfg.max_iterations; ++l) {
    ReplicateSet completed;
    auto t0 = std::chrono::steady_clock::now();
    try {
      completed = model.conditional_simulate(theta, field, cfg.H, rng, &chain);
    } catch (const Error& e) {
      r.simulation_seconds += seconds_since(t0);
      r.status = EMStatus::Failed;
      r.failure = "conditional simulation failed at iteration " + std::to_string(l) + ": " +
                  e.what();
      r.theta = theta;
      return r;
    }
    r.simulation_seconds += seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    std::vector<double> next = estimate_complete(h, model, completed);
    r.network_seconds += seconds_since(t0);

    double change = 0.0;
    for (std::size_t q = 0; q < next.size(); ++q) {
      change = std::max(change, std::abs(next[q] - theta[q]) / (std::abs(theta[q]) + 1e-12));
    }
    theta = std::move(next);
    r.trace.push_back(theta);
    r.changes.push_back(change);
    r.iterations = l;
    hits = change < cfg.tolerance ? hits + 1 : 0;
    if (hits >= cfg.hits) {
      r.status = EMStatus::Converged;
      break;
    }
  }
  r.theta = theta;
  return r;
}

void write_em_trace(std::ostream& out, const EMResult& r, const std::vector<std::string>& names) {
  out << "iteration";
  for (const auto& n : names) out << ',' << n;
  out << ",relative_change\n";
  out << std::setprecision(17);
  for (std::size_t l = 0; l < r.trace.size(); ++l) {
    out << l;
    for (double v : r.trace[l]) out << ',' << v;
    out << ',';
    if (l > 0) out << r.changes[l - 1];
    out << '\n';
  }
}

// ---------------------------------------------------------------------------

void EnsembleHandle::validate() const {
  require(!members.empty(), ErrorKind::InvalidArgument, "ensemble: no members");
  for (const auto& m : members) {
    m.validate();
    require(m.arch == members[0].arch, ErrorKind::InvalidArgument,
            "ensemble: members have different architectures");
    require(m.meta.variant == members[0].meta.variant && m.meta.H == members[0].meta.H &&
                m.meta.model == members[0].meta.model,
            ErrorKind::InvalidArgument, "ensemble: members were trained for different tasks");
  }
}

std::vector<double> ensemble_estimate(const EnsembleHandle& e, const Tensor& elements) {
  require(!e.members.empty(), ErrorKind::InvalidArgument, "ensemble: no members");
  std::vector<double> mean;
  for (const auto& m : e.members) {
    const auto est = network_forward(m, elements, 1).values();
    if (mean.empty()) mean.assign(est.size(), 0.0);
    require(est.size() == mean.size(), ErrorKind::InvalidArgument,
            "ensemble: members disagree on output width");
    for (std::size_t i = 0; i < est.size(); ++i) mean[i] += est[i];
  }
  for (auto& v : mean) v /= static_cast<double>(e.members.size());
  return mean;
}

std::vector<double> ensemble_estimate(const EnsembleHandle& e, const ReplicateSet& replicates) {
  require(!e.members.empty(), ErrorKind::InvalidArgument, "ensemble: no members");
  std::vector<double> mean;
  for (const auto& m : e.members) {
    const auto est = deepsets_forward(m, replicates);
    if (mean.empty()) mean.assign(est.size(), 0.0);
    for (std::size_t i = 0; i < est.size(); ++i) mean[i] += est[i];
  }
  for (auto& v : mean) v /= static_cast<double>(e.members.size());
  return mean;
}

}  // namespace nbe
