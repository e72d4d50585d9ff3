#include "nbe/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "nbe/error.hpp"

namespace nbe {

namespace {

double now_seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs body(i) for i in [0, n) on `threads` workers, strided.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

BootstrapResult summarize(std::vector<std::vector<double>> raw, std::size_t B) {
  BootstrapResult r;
  for (auto& e : raw) {
    if (e.empty()) {
      ++r.dropped;
    } else {
      r.estimates.push_back(std::move(e));
    }
  }
  require(r.dropped * 20 <= B, ErrorKind::Numerical,
          "bootstrap: " + std::to_string(r.dropped) + " of " + std::to_string(B) +
              " replicates failed (more than 5%)");
  require(!r.estimates.empty(), ErrorKind::Numerical, "bootstrap: no successful replicates");
  const std::size_t p = r.estimates[0].size();
  for (std::size_t q = 0; q < p; ++q) {
    std::vector<double> col;
    col.reserve(r.estimates.size());
    for (const auto& e : r.estimates) col.push_back(e[q]);
    r.lower.push_back(sample_quantile(col, 0.025));
    r.upper.push_back(sample_quantile(std::move(col), 0.975));
  }
  return r;
}

}  // namespace

double empirical_rmse(const std::vector<std::vector<double>>& estimates,
                      const std::vector<std::vector<double>>& truths) {
  require(!estimates.empty(), ErrorKind::InvalidArgument, "rmse: no estimates");
  require(estimates.size() == truths.size(), ErrorKind::InvalidArgument,
          "rmse: " + std::to_string(estimates.size()) + " estimates vs " +
              std::to_string(truths.size()) + " truths");
  double total = 0.0;
  for (std::size_t k = 0; k < estimates.size(); ++k) {
    require(estimates[k].size() == truths[k].size(), ErrorKind::InvalidArgument,
            "rmse: parameter count mismatch in case " + std::to_string(k));
    for (std::size_t q = 0; q < truths[k].size(); ++q) {
      const double d = estimates[k][q] - truths[k][q];
      total += d * d;
    }
  }
  return std::sqrt(total / static_cast<double>(estimates.size()));
}

double sample_quantile(std::vector<double> values, double p) {
  require(!values.empty(), ErrorKind::InvalidArgument, "quantile of an empty sample");
  require(p >= 0.0 && p <= 1.0, ErrorKind::InvalidArgument, "quantile level outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = p * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

// ---------------------------------------------------------------------------

NamedEstimator masking_estimator(std::string name, const EstimatorHandle& h,
                                 const DataModel& model) {
  return {std::move(name), [&h, &model](const IncompleteField& f, Rng&) {
            EstimateOutcome o;
            const auto t0 = std::chrono::steady_clock::now();
            o.theta = estimate_masking(h, model, f);
            o.network_seconds = now_seconds(t0);
            return o;
          }};
}

NamedEstimator em_estimator(std::string name, const EstimatorHandle& h, const DataModel& model,
                            EMConfig cfg) {
  cfg.validate();
  return {std::move(name), [&h, &model, cfg](const IncompleteField& f, Rng& rng) {
            const EMResult r = neural_em(h, model, f, cfg, rng);
            EstimateOutcome o;
            o.theta = r.theta;
            o.status = r.status == EMStatus::Converged ? "ok" : em_status_name(r.status);
            if (r.status == EMStatus::Failed) o.status = "error: " + r.failure;
            o.simulation_seconds = r.simulation_seconds;
            o.network_seconds = r.network_seconds;
            return o;
          }};
}

NamedEstimator complete_estimator(std::string name, const EnsembleHandle& e,
                                  const DataModel& model) {
  e.validate();
  return {std::move(name), [&e, &model](const IncompleteField& f, Rng&) {
            require(f.fully_observed(), ErrorKind::InvalidArgument,
                    "complete-data estimator given a field with missing entries");
            EstimateOutcome o;
            const auto t0 = std::chrono::steady_clock::now();
            o.theta = ensemble_estimate(e, encode_complete(model, f.values));
            o.network_seconds = now_seconds(t0);
            return o;
          }};
}

NamedEstimator gp_map_estimator(std::string name, GPSpec spec) {
  spec.validate();
  return {std::move(name), [spec](const IncompleteField& f, Rng&) {
            EstimateOutcome o;
            const MapResult m = map_estimate_gp(spec, f);
            o.theta = m.theta;
            if (!m.converged) o.status = "max_iterations";
            return o;
          }};
}

// ---------------------------------------------------------------------------

BootstrapResult parametric_bootstrap(const DataModel& model, const std::vector<double>& theta_hat,
                                     const std::vector<std::uint8_t>& observed,
                                     const FieldEstimator& estimator, std::size_t B,
                                     std::uint64_t seed, std::size_t threads) {
  require(B >= 2, ErrorKind::Config, "bootstrap: B must be >= 2");
  require(observed.size() == shape_size(model.field_shape()), ErrorKind::ShapeMismatch,
          "bootstrap: mask size does not match the model's field");
  require(in_support(model.prior(), theta_hat), ErrorKind::InvalidArgument,
          "bootstrap: fitted parameters outside the prior support");
  std::vector<std::vector<double>> raw(B);
  parallel_for(B, threads, [&](std::size_t b) {
    Rng rng = make_rng(seed, b);
    try {
      IncompleteField f;
      f.values = model.simulate(theta_hat, rng);
      f.observed = observed;
      for (std::size_t i = 0; i < f.size(); ++i) {
        if (!observed[i]) f.values[i] = f.fill;
      }
      EstimateOutcome o = estimator(f, rng);
      if (o.status.rfind("error", 0) != 0 && all_finite(o.theta)) raw[b] = std::move(o.theta);
    } catch (const Error&) {
    }
  });
  return summarize(std::move(raw), B);
}

BootstrapResult nonparametric_bootstrap(const std::vector<Tensor>& units,
                                        const SetEstimator& estimator, std::size_t B,
                                        std::uint64_t seed, std::size_t threads) {
  require(B >= 2, ErrorKind::Config, "bootstrap: B must be >= 2");
  require(!units.empty(), ErrorKind::InvalidArgument, "bootstrap: no data");
  std::vector<std::vector<double>> raw(B);
  parallel_for(B, threads, [&](std::size_t b) {
    Rng rng = make_rng(seed, b);
    std::uniform_int_distribution<std::size_t> pick(0, units.size() - 1);
    std::vector<Tensor> sample;
    sample.reserve(units.size());
    for (std::size_t i = 0; i < units.size(); ++i) sample.push_back(units[pick(rng)]);
    try {
      auto est = estimator(sample, rng);
      if (all_finite(est)) raw[b] = std::move(est);
    } catch (const Error&) {
    }
  });
  return summarize(std::move(raw), B);
}

std::vector<Tensor> split_rows(const Tensor& field) {
  require(field.rank() == 2, ErrorKind::ShapeMismatch,
          "split_rows: expected [T, d], got " + shape_str(field.shape()));
  const std::size_t d = field.dim(1);
  std::vector<Tensor> rows;
  for (std::size_t t = 0; t < field.dim(0); ++t) {
    rows.emplace_back(Shape{d}, std::vector<double>(field.values().begin() + t * d,
                                                    field.values().begin() + (t + 1) * d));
  }
  return rows;
}

Tensor join_rows(const std::vector<Tensor>& rows) {
  require(!rows.empty(), ErrorKind::InvalidArgument, "join_rows: no rows");
  const std::size_t d = rows[0].size();
  Tensor out({rows.size(), d});
  for (std::size_t t = 0; t < rows.size(); ++t) {
    require(rows[t].rank() == 1 && rows[t].size() == d, ErrorKind::ShapeMismatch,
            "join_rows: rows differ in length");
    std::copy(rows[t].values().begin(), rows[t].values().end(), out.values().begin() + t * d);
  }
  return out;
}

// ---------------------------------------------------------------------------

void ExperimentSpec::validate() const {
  require(model != nullptr, ErrorKind::Config, "experiment: no model");
  require(!estimators.empty(), ErrorKind::Config, "experiment: no estimators");
  require(!missingness.empty(), ErrorKind::Config, "experiment: no missingness models");
  require(test_size >= 1, ErrorKind::Config, "experiment: test_size must be >= 1");
  require(threads >= 1, ErrorKind::Config, "experiment: threads must be >= 1");
  for (const auto& m : missingness) m.model.validate();
  for (std::size_t i = 0; i < estimators.size(); ++i) {
    require(static_cast<bool>(estimators[i].fn), ErrorKind::Config,
            "experiment: estimator '" + estimators[i].name + "' is empty");
    for (std::size_t j = 0; j < i; ++j) {
      require(estimators[i].name != estimators[j].name, ErrorKind::Config,
              "experiment: duplicate estimator name '" + estimators[i].name + "'");
    }
  }
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  const DataModel& model = *spec.model;
  const std::size_t M = spec.missingness.size(), E = spec.estimators.size();
  const std::size_t p = model.prior().dim();
  ExperimentResult res;
  res.parameter_names = model.prior().names();
  res.rows.resize(spec.test_size * M);

  parallel_for(spec.test_size, spec.threads, [&](std::size_t k) {
    const std::uint64_t case_seed = split_seed(spec.seed, k);
    Rng rng = make_rng(case_seed, 0);
    const std::vector<double> truth = sample_prior(model.prior(), rng);
    const Tensor complete = model.simulate(truth, rng);
    for (std::size_t m = 0; m < M; ++m) {
      Rng mask_rng = make_rng(case_seed, 1 + m);
      const IncompleteField field = apply_missingness(spec.missingness[m].model, complete, mask_rng);
      ExperimentRow& row = res.rows[k * M + m];
      row.case_id = k;
      row.missingness = spec.missingness[m].name;
      row.truth = truth;
      for (std::size_t e = 0; e < E; ++e) {
        Rng est_rng = make_rng(case_seed, 1000 + m * E + e);
        const auto t0 = std::chrono::steady_clock::now();
        EstimateOutcome o;
        try {
          o = spec.estimators[e].fn(field, est_rng);
          require(o.theta.size() == p, ErrorKind::ShapeMismatch,
                  "estimator returned " + std::to_string(o.theta.size()) + " values");
        } catch (const Error& err) {
          o.theta.assign(p, std::numeric_limits<double>::quiet_NaN());
          o.status = std::string("error: ") + err.what();
        }
        row.seconds.push_back(now_seconds(t0));
        row.outcomes.push_back(std::move(o));
      }
    }
  });

  for (std::size_t e = 0; e < E; ++e) {
    EstimatorSummary& s = res.summary[spec.estimators[e].name];
    s.training_seconds = spec.estimators[e].training_seconds;
    for (std::size_t m = 0; m < M; ++m) {
      const std::string& mn = spec.missingness[m].name;
      std::vector<std::vector<double>> est, tru;
      double secs = 0.0, sim = 0.0, net = 0.0;
      std::size_t failed = 0, nonconv = 0;
      for (std::size_t k = 0; k < spec.test_size; ++k) {
        const ExperimentRow& row = res.rows[k * M + m];
        const EstimateOutcome& o = row.outcomes[e];
        secs += row.seconds[e];
        sim += o.simulation_seconds;
        net += o.network_seconds;
        if (o.status.rfind("error", 0) == 0 || !all_finite(o.theta)) {
          ++failed;
          continue;
        }
        if (o.status != "ok") ++nonconv;
        est.push_back(o.theta);
        tru.push_back(row.truth);
      }
      const double n = static_cast<double>(spec.test_size);
      s.rmse[mn] = est.empty() ? std::numeric_limits<double>::quiet_NaN() : empirical_rmse(est, tru);
      s.mean_seconds[mn] = secs / n;
      s.mean_simulation_seconds[mn] = sim / n;
      s.mean_network_seconds[mn] = net / n;
      s.failures[mn] = failed;
      s.nonconverged[mn] = nonconv;
    }
  }

  if (!spec.csv_path.empty()) {
    std::ofstream out(spec.csv_path);
    require(static_cast<bool>(out), ErrorKind::InvalidArgument,
            "cannot write '" + spec.csv_path + "'");
    res.write_csv(out, spec);
  }
  if (!spec.json_path.empty()) {
    std::ofstream out(spec.json_path);
    require(static_cast<bool>(out), ErrorKind::InvalidArgument,
            "cannot write '" + spec.json_path + "'");
    out << res.summary_json() << '\n';
  }
  return res;
}

std::string ExperimentResult::summary_json() const {
  nlohmann::json j = nlohmann::json::object();
  auto num = [](double v) -> nlohmann::json {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  };
  for (const auto& [name, s] : summary) {
    nlohmann::json e;
    e["training_seconds"] = s.training_seconds;
    for (const auto& [m, v] : s.rmse) {
      e["rmse"][m] = num(v);
      e["estimation_seconds"][m] = s.mean_seconds.at(m);
      e["simulation_seconds"][m] = s.mean_simulation_seconds.at(m);
      e["network_seconds"][m] = s.mean_network_seconds.at(m);
      e["failures"][m] = s.failures.at(m);
      e["nonconverged"][m] = s.nonconverged.at(m);
    }
    j["estimators"][name] = e;
  }
  j["parameters"] = parameter_names;
  j["cases"] = rows.size();
  return j.dump(2);
}

void ExperimentResult::write_csv(std::ostream& out, const ExperimentSpec& spec) const {
  out << "case,missingness";
  for (const auto& n : parameter_names) out << ",true_" << n;
  for (const auto& e : spec.estimators) {
    for (const auto& n : parameter_names) out << ',' << e.name << '_' << n;
    out << ',' << e.name << "_seconds," << e.name << "_status";
  }
  out << '\n' << std::setprecision(10);
  for (const auto& row : rows) {
    out << row.case_id << ',' << row.missingness;
    for (double v : row.truth) out << ',' << v;
    for (std::size_t e = 0; e < row.outcomes.size(); ++e) {
      for (double v : row.outcomes[e].theta) {
        out << ',';
        if (std::isfinite(v)) out << v; else out << "nan";
      }
      std::string status = row.outcomes[e].status;
      std::replace(status.begin(), status.end(), ',', ';');
      std::replace(status.begin(), status.end(), '\n', ' ');
      out << ',' << row.seconds[e] << ',' << status;
    }
    out << '\n';
  }
}

}  // namespace nbe
