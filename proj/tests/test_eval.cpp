#include <cmath>
#include <sstream>

#include <json.hpp>

#include "doctest.h"
#include "nbe/error.hpp"
#include "nbe/eval.hpp"
#include "nbe/model_gauss.hpp"

using namespace nbe;

namespace {

// Conjugate mode from the observed entries only.
EstimateOutcome observed_map(const IncompleteField& f, Rng&) {
  std::vector<double> z;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f.observed[i]) z.push_back(f.values[i]);
  }
  return {{gaussian_variance_map(z, 3.0, 1.0)}};
}

}  // namespace

TEST_CASE("rmse") {
  CHECK(empirical_rmse({{1.0, 2.0}, {3.0, 4.0}}, {{1.0, 2.0}, {3.0, 4.0}}) == 0.0);
  CHECK(empirical_rmse({{3.0, 4.0}}, {{0.0, 0.0}}) == doctest::Approx(5.0));
  CHECK(empirical_rmse({{1.0}, {3.0}}, {{0.0}, {0.0}}) == doctest::Approx(std::sqrt(5.0)));
  CHECK(empirical_rmse({{3.0}, {1.0}}, {{0.0}, {0.0}}) ==
        empirical_rmse({{1.0}, {3.0}}, {{0.0}, {0.0}}));
  CHECK_THROWS_AS(empirical_rmse({}, {}), Error);
  CHECK_THROWS_AS(empirical_rmse({{1.0}}, {{1.0}, {2.0}}), Error);
}

TEST_CASE("sample quantiles") {
  CHECK(sample_quantile({4, 1, 3, 2}, 0.5) == doctest::Approx(2.5));
  CHECK(sample_quantile({4, 1, 3, 2}, 0.025) == doctest::Approx(1.075));
  CHECK(sample_quantile({4, 1, 3, 2}, 1.0) == 4.0);
  CHECK(sample_quantile({7}, 0.3) == 7.0);
  CHECK_THROWS_AS(sample_quantile({}, 0.5), Error);
}

TEST_CASE("parametric bootstrap") {
  GaussVarianceModel m({});
  std::vector<std::uint8_t> mask(10, 1);
  mask[2] = 0;
  FieldEstimator constant = [](const IncompleteField&, Rng&) { return EstimateOutcome{{0.7}}; };
  auto c = parametric_bootstrap(m, {0.5}, mask, constant, 50, 3);
  CHECK(c.lower[0] == 0.7);
  CHECK(c.upper[0] == 0.7);
  CHECK(c.estimates.size() == 50);

  auto a = parametric_bootstrap(m, {0.5}, mask, observed_map, 100, 9);
  auto b = parametric_bootstrap(m, {0.5}, mask, observed_map, 100, 9, 3);
  CHECK(a.estimates == b.estimates);
  CHECK(a.lower == b.lower);
  CHECK(a.lower[0] < a.upper[0]);

  // The bootstrap field carries the mask: the estimator sees 9 observations.
  FieldEstimator count = [](const IncompleteField& f, Rng&) {
    return EstimateOutcome{{static_cast<double>(f.observed_count())}};
  };
  CHECK(parametric_bootstrap(m, {0.5}, mask, count, 5, 1).lower[0] == 9.0);

  // Drops are tolerated up to 5%.
  FieldEstimator flaky = [](const IncompleteField& f, Rng&) {
    if (f.values[0] > 1.2) fail(ErrorKind::Numerical, "flaky");
    return EstimateOutcome{{1.0}};
  };
  CHECK_THROWS_AS(parametric_bootstrap(m, {2.0}, mask, flaky, 40, 1), Error);
  FieldEstimator rare = [](const IncompleteField& f, Rng&) {
    if (f.values[0] > 2.0) fail(ErrorKind::Numerical, "rare");
    return EstimateOutcome{{1.0}};
  };
  auto r = parametric_bootstrap(m, {0.5}, mask, rare, 200, 1);
  CHECK(r.dropped + r.estimates.size() == 200);
  CHECK(r.dropped <= 10);
  CHECK_THROWS_AS(parametric_bootstrap(m, {0.5}, mask, constant, 1, 1), Error);
  CHECK_THROWS_AS(parametric_bootstrap(m, {-1.0}, mask, constant, 5, 1), Error);
}

TEST_CASE("nonparametric bootstrap") {
  SetEstimator mean0 = [](const std::vector<Tensor>& u, Rng&) {
    double s = 0.0;
    for (const auto& t : u) s += t[0];
    return std::vector<double>{s / static_cast<double>(u.size())};
  };
  auto one = nonparametric_bootstrap({Tensor::from({2.5})}, mean0, 20, 1);
  CHECK(one.lower[0] == 2.5);
  CHECK(one.upper[0] == 2.5);
  SetEstimator constant = [](const std::vector<Tensor>&, Rng&) { return std::vector<double>{1.0}; };
  std::vector<Tensor> units;
  for (int i = 0; i < 50; ++i) units.push_back(Tensor::from({static_cast<double>(i)}));
  auto c = nonparametric_bootstrap(units, constant, 20, 1);
  CHECK(c.upper[0] - c.lower[0] == 0.0);
  // Mean of 0..49: sd of the bootstrap mean is about 14.4 / sqrt(50).
  auto b = nonparametric_bootstrap(units, mean0, 400, 2);
  CHECK(b.lower[0] < 24.5);
  CHECK(b.upper[0] > 24.5);
  CHECK(b.upper[0] - b.lower[0] == doctest::Approx(2 * 1.96 * 14.43 / std::sqrt(50.0)).epsilon(0.2));

  const Tensor field({3, 2}, {1, 2, 3, 4, 5, 6});
  const auto rows = split_rows(field);
  REQUIRE(rows.size() == 3);
  CHECK(rows[1][1] == 4.0);
  CHECK(join_rows(rows) == field);
}

TEST_CASE("experiment runner") {
  GaussVarianceModel m({});
  ExperimentSpec spec;
  spec.model = &m;
  spec.estimators = {{"oracle", observed_map, 1.5},
                     {"broken", [](const IncompleteField& f, Rng&) -> EstimateOutcome {
                        if (f.observed_count() < 10) fail(ErrorKind::Numerical, "no, thanks");
                        return {{1.0}};
                      }}};
  spec.missingness = {{"none", MissingnessModel::fixed(MissingKind::MCAR, 0.0)},
                      {"MCAR", MissingnessModel::fixed(MissingKind::MCAR, 0.3)}};
  spec.test_size = 40;
  spec.seed = 11;
  const auto a = run_experiment(spec);
  REQUIRE(a.rows.size() == 80);
  spec.threads = 3;
  const auto b = run_experiment(spec);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].truth == b.rows[i].truth);
    CHECK(a.rows[i].outcomes[0].theta == b.rows[i].outcomes[0].theta);
  }
  // The oracle's RMSE equals a direct recomputation.
  std::vector<std::vector<double>> est, tru;
  for (const auto& row : a.rows) {
    if (row.missingness == "MCAR") {
      est.push_back(row.outcomes[0].theta);
      tru.push_back(row.truth);
    }
  }
  CHECK(a.summary.at("oracle").rmse.at("MCAR") == doctest::Approx(empirical_rmse(est, tru)));
  CHECK(a.summary.at("oracle").training_seconds == 1.5);
  CHECK(a.summary.at("broken").failures.at("none") == 0);
  CHECK(a.summary.at("broken").rmse.at("none") >= 0.0);
  const std::size_t broken = a.summary.at("broken").failures.at("MCAR");
  CHECK(broken > 0);

  const auto j = nlohmann::json::parse(a.summary_json());
  CHECK(j["estimators"]["oracle"]["rmse"]["MCAR"].get<double>() ==
        doctest::Approx(a.summary.at("oracle").rmse.at("MCAR")));
  std::ostringstream csv;
  a.write_csv(csv, spec);
  const std::string text = csv.str();
  CHECK(text.rfind("case,missingness,true_sigma2,oracle_sigma2,oracle_seconds,oracle_status,"
                   "broken_sigma2,broken_seconds,broken_status\n",
                   0) == 0);
  CHECK(text.find("error: ") != std::string::npos);

  spec.estimators.push_back({"oracle", observed_map});
  CHECK_THROWS_AS(run_experiment(spec), Error);
}
