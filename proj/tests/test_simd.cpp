#include <random>
#include <vector>

#include "doctest.h"
#include "nbe/error.hpp"
#include "nbe/simd.hpp"

using namespace nbe;

namespace {

std::vector<double> randv(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

// Naive triple loop, independent of both kernel paths.
void gemm_ref(std::size_t m, std::size_t n, std::size_t k, const std::vector<double>& a,
              const std::vector<double>& b, std::vector<double>& c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += (long double)a[i * k + p] * b[p * n + j];
      c[i * n + j] = (double)s;
    }
}

}  // namespace

TEST_CASE("isa detection and selection") {
  const auto saved = simd::active_isa();
  simd::set_active_isa(simd::Isa::Scalar);
  CHECK(simd::active_isa() == simd::Isa::Scalar);
  if (simd::detected_isa() == simd::Isa::Avx2) {
    simd::set_active_isa(simd::Isa::Avx2);
    CHECK(simd::active_isa() == simd::Isa::Avx2);
  } else {
    CHECK_THROWS_AS(simd::set_active_isa(simd::Isa::Avx2), Error);
  }
  simd::set_active_isa(saved);
}

#if NBE_HAVE_AVX2_KERNELS
TEST_CASE("avx2 kernels match scalar reference") {
  if (simd::detected_isa() != simd::Isa::Avx2) return;
  std::mt19937_64 rng(7);
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 9u, 15u, 16u, 17u, 33u, 100u}) {
    auto a = randv(n, rng), b = randv(n, rng);
    CHECK(simd::avx2::dot(a.data(), b.data(), n) ==
          doctest::Approx(simd::scalar::dot(a.data(), b.data(), n)).epsilon(1e-13));
    CHECK(simd::avx2::sum(a.data(), n) ==
          doctest::Approx(simd::scalar::sum(a.data(), n)).epsilon(1e-13));
    std::vector<double> o1(n), o2(n);
    simd::avx2::add(a.data(), b.data(), o1.data(), n);
    simd::scalar::add(a.data(), b.data(), o2.data(), n);
    CHECK(o1 == o2);
    simd::avx2::mul(a.data(), b.data(), o1.data(), n);
    simd::scalar::mul(a.data(), b.data(), o2.data(), n);
    CHECK(o1 == o2);
    simd::avx2::relu(a.data(), o1.data(), n);
    simd::scalar::relu(a.data(), o2.data(), n);
    CHECK(o1 == o2);
    std::vector<double> g1 = b, g2 = b;
    simd::avx2::relu_backward(a.data(), b.data(), g1.data(), n);
    simd::scalar::relu_backward(a.data(), b.data(), g2.data(), n);
    CHECK(g1 == g2);
    std::vector<double> y1 = b, y2 = b;
    simd::avx2::axpy(0.3, a.data(), y1.data(), n);
    simd::scalar::axpy(0.3, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));
  }
}

TEST_CASE("avx2 gemm matches reference across remainders") {
  if (simd::detected_isa() != simd::Isa::Avx2) return;
  std::mt19937_64 rng(11);
  for (std::size_t m : {1u, 3u, 4u, 5u, 9u, 17u})
    for (std::size_t n : {1u, 4u, 7u, 8u, 9u, 16u, 19u})
      for (std::size_t k : {0u, 1u, 2u, 5u, 33u}) {
        auto a = randv(m * k, rng), b = randv(k * n, rng), c0 = randv(m * n, rng);
        std::vector<double> ref(m * n);
        gemm_ref(m, n, k, a, b, ref);
        for (bool acc : {false, true}) {
          auto c1 = c0, c2 = c0;
          simd::avx2::gemm(m, n, k, a.data(), k, b.data(), n, c1.data(), n, acc);
          simd::scalar::gemm(m, n, k, a.data(), k, b.data(), n, c2.data(), n, acc);
          for (std::size_t i = 0; i < m * n; ++i) {
            const double expect = ref[i] + (acc ? c0[i] : 0.0);
            CHECK(c1[i] == doctest::Approx(expect).epsilon(1e-12));
            CHECK(c2[i] == doctest::Approx(expect).epsilon(1e-12));
          }
        }
      }
}

TEST_CASE("transposed gemm matches reference") {
  std::mt19937_64 rng(12);
  for (std::size_t m : {1u, 4u, 6u, 13u})
    for (std::size_t n : {1u, 5u, 8u, 17u})
      for (std::size_t k : {0u, 1u, 3u, 40u}) {
        // A stored [k, m]; reference multiplies its explicit transpose.
        auto a = randv(k * m, rng), b = randv(k * n, rng), c0 = randv(m * n, rng);
        std::vector<double> at(m * k);
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t i = 0; i < m; ++i) at[i * k + p] = a[p * m + i];
        std::vector<double> ref(m * n);
        gemm_ref(m, n, k, at, b, ref);
        for (bool acc : {false, true}) {
          auto c1 = c0, c2 = c0;
          simd::scalar::gemm_tn(m, n, k, a.data(), m, b.data(), n, c2.data(), n, acc);
          if (simd::detected_isa() == simd::Isa::Avx2) {
            simd::avx2::gemm_tn(m, n, k, a.data(), m, b.data(), n, c1.data(), n, acc);
          } else {
            c1 = c2;
          }
          for (std::size_t i = 0; i < m * n; ++i) {
            const double expect = ref[i] + (acc ? c0[i] : 0.0);
            CHECK(c1[i] == doctest::Approx(expect).epsilon(1e-12));
            CHECK(c2[i] == doctest::Approx(expect).epsilon(1e-12));
          }
        }
      }
}

TEST_CASE("row and column helpers agree") {
  if (simd::detected_isa() != simd::Isa::Avx2) return;
  std::mt19937_64 rng(3);
  const std::size_t rows = 7, cols = 13;
  auto x = randv(rows * cols, rng), bias = randv(cols, rng);
  auto y1 = x, y2 = x;
  simd::avx2::add_rows(y1.data(), bias.data(), rows, cols);
  simd::scalar::add_rows(y2.data(), bias.data(), rows, cols);
  CHECK(y1 == y2);
  std::vector<double> s1(cols, 1.0), s2(cols, 1.0);
  simd::avx2::column_sums(x.data(), rows, cols, s1.data());
  simd::scalar::column_sums(x.data(), rows, cols, s2.data());
  for (std::size_t j = 0; j < cols; ++j) CHECK(s1[j] == doctest::Approx(s2[j]).epsilon(1e-14));
}
#endif
