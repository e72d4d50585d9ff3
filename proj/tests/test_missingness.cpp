#include <cmath>
#include <queue>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>

#include "doctest.h"
#include "nbe/error.hpp"
#include "nbe/missingness.hpp"

using namespace nbe;

namespace {
Tensor random_grid(std::size_t h, std::size_t w, Rng& rng) {
  Tensor t({h, w});
  for (auto& v : t.values()) v = uniform01(rng) - 0.5;
  return t;
}
}  // namespace

TEST_CASE("encode examples") {
  IncompleteField f{Tensor::from({1.5, 9.0, 2.0}), {1, 0, 1}, 0.0};
  auto [U, W] = encode_masked(f);
  CHECK(U.values() == std::vector<double>{1.5, 0.0, 2.0});
  CHECK(W.values() == std::vector<double>{1, 0, 1});
  auto full = fully_observed(Tensor::from({3, 4}));
  auto [U2, W2] = encode_masked(full);
  CHECK(U2.values() == std::vector<double>{3, 4});
  CHECK(W2.values() == std::vector<double>{1, 1});
  IncompleteField one{Tensor::from({1, 2, 3, 4}), {0, 0, 1, 0}, 0.0};
  CHECK(encode_masked(one).second.values() == std::vector<double>{0, 0, 1, 0});
}

TEST_CASE("decode inverts encode, including observed values equal to c") {
  Rng rng(1);
  for (int rep = 0; rep < 1000; ++rep) {
    Tensor z = random_grid(8, 8, rng);
    for (std::size_t i = 0; i < z.size(); i += 7) z[i] = 0.0;
    auto f = apply_missingness(MissingnessModel::fixed(MissingKind::MCAR, 0.3), z, rng);
    auto [U, W] = encode_masked(f);
    CHECK(decode_masked(U, W, 0.0) == f);
  }
  Tensor u = Tensor::from({1, 2});
  auto all = decode_masked(u, Tensor::from({1, 1}), 0.0);
  CHECK(all.fully_observed());
  CHECK(all.values == u);
  CHECK_THROWS_AS(decode_masked(u, Tensor::from({1, 0.5}), 0.0), Error);
}

TEST_CASE("masked-out values do not reach the encoding") {
  IncompleteField a{Tensor::from({1, 2, 3}), {1, 0, 1}, 0.0};
  IncompleteField b{Tensor::from({1, -7, 3}), {1, 0, 1}, 0.0};
  CHECK(encode_masked(a) == encode_masked(b));
}

TEST_CASE("proportion zero leaves the field observed; one is rejected") {
  Rng rng(2);
  Tensor z = random_grid(4, 4, rng);
  auto f = apply_missingness(MissingnessModel::fixed(MissingKind::MCAR, 0.0), z, rng);
  CHECK(f.fully_observed());
  CHECK(f.values == z);
  CHECK_THROWS_AS(apply_missingness(MissingnessModel::fixed(MissingKind::MCAR, 1.0), z, rng),
                  Error);
  CHECK_THROWS_AS(apply_missingness(MissingnessModel::fixed(MissingKind::MICB, 0.99), z, rng),
                  Error);
}

TEST_CASE("MCAR missing fraction") {
  Rng rng(3);
  Tensor z({100000}, 1.0);
  auto f = apply_missingness(MissingnessModel::fixed(MissingKind::MCAR, 0.5), z, rng);
  const double frac = 1.0 - double(f.observed_count()) / z.size();
  CHECK(std::abs(frac - 0.5) < 0.01);
}

TEST_CASE("MCAR missing counts are binomial") {
  Rng rng(4);
  const std::size_t n = 20;
  const double q = 0.3;
  const int draws = 10000;
  Tensor z({n}, 1.0);
  std::vector<int> counts(n + 1, 0);
  for (int i = 0; i < draws; ++i) {
    auto f = apply_missingness(MissingnessModel::fixed(MissingKind::MCAR, q), z, rng);
    counts[n - f.observed_count()]++;
  }
  boost::math::binomial_distribution<double> bin(n, q);
  // pool bins with expected count < 5
  double chi2 = 0.0, obs = 0.0, expct = 0.0;
  int bins = 0;
  for (std::size_t k = 0; k <= n; ++k) {
    obs += counts[k];
    expct += draws * boost::math::pdf(bin, double(k));
    if (expct >= 5.0 || k == n) {
      chi2 += (obs - expct) * (obs - expct) / expct;
      ++bins;
      obs = expct = 0.0;
    }
  }
  boost::math::chi_squared_distribution<double> chi(bins - 1);
  CHECK(chi2 < boost::math::quantile(chi, 0.99));
}

TEST_CASE("MICB block on 16x16 at 20%") {
  Rng rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    Tensor z = random_grid(16, 16, rng);
    auto f = apply_missingness(MissingnessModel::fixed(MissingKind::MICB, 0.2), z, rng);
    const std::size_t missing = 256 - f.observed_count();
    // 51 target cells; no 51-cell rectangle has aspect within [1/2, 2]
    CHECK(missing >= 50);
    CHECK(missing <= 52);
    // rectangular: bounding box of missing cells is fully missing
    std::size_t r0 = 16, r1 = 0, c0 = 16, c1 = 0;
    for (std::size_t i = 0; i < 256; ++i) {
      if (!f.observed[i]) {
        r0 = std::min(r0, i / 16);
        r1 = std::max(r1, i / 16);
        c0 = std::min(c0, i % 16);
        c1 = std::max(c1, i % 16);
      }
    }
    CHECK((r1 - r0 + 1) * (c1 - c0 + 1) == missing);
    const double aspect = double(r1 - r0 + 1) / double(c1 - c0 + 1);
    CHECK(aspect >= 0.5);
    CHECK(aspect <= 2.0);
    for (std::size_t i = 0; i < 256; ++i) {
      if (f.observed[i]) CHECK(f.values[i] == z[i]);
    }
  }
  auto exact = micb_block(16, 16, 64, 1.0);
  CHECK(exact.first * exact.second == 64);
}
