#include <atomic>

#include "nbe/error.hpp"
#include "nbe/simd.hpp"

namespace nbe::simd {

namespace {

bool cpu_has_avx2() {
#if NBE_HAVE_AVX2_KERNELS
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() { return cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar; }

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

const char* isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

Isa detected_isa() {
  static const Isa isa = initial_isa();
  return isa;
}

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (isa == Isa::Avx2 && detected_isa() != Isa::Avx2) {
    fail(ErrorKind::Unsupported, "avx2 kernels not available on this CPU");
  }
  active().store(isa, std::memory_order_relaxed);
}

#if NBE_HAVE_AVX2_KERNELS
#define NBE_DISPATCH(call) \
  return active_isa() == Isa::Avx2 ? avx2::call : scalar::call
#else
#define NBE_DISPATCH(call) return scalar::call
#endif

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double* c,
          std::size_t ldc, bool accumulate) {
  NBE_DISPATCH(gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate));
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double* c,
             std::size_t ldc, bool accumulate) {
  NBE_DISPATCH(gemm_tn(m, n, k, a, lda, b, ldb, c, ldc, accumulate));
}
double dot(const double* a, const double* b, std::size_t n) {
  NBE_DISPATCH(dot(a, b, n));
}
double sum(const double* x, std::size_t n) { NBE_DISPATCH(sum(x, n)); }
void axpy(double alpha, const double* x, double* y, std::size_t n) {
  NBE_DISPATCH(axpy(alpha, x, y, n));
}
void add(const double* a, const double* b, double* out, std::size_t n) {
  NBE_DISPATCH(add(a, b, out, n));
}
void mul(const double* a, const double* b, double* out, std::size_t n) {
  NBE_DISPATCH(mul(a, b, out, n));
}
void relu(const double* x, double* out, std::size_t n) {
  NBE_DISPATCH(relu(x, out, n));
}
void relu_backward(const double* x, const double* dy, double* dx, std::size_t n) {
  NBE_DISPATCH(relu_backward(x, dy, dx, n));
}
void add_rows(double* y, const double* bias, std::size_t rows, std::size_t cols) {
  NBE_DISPATCH(add_rows(y, bias, rows, cols));
}
void column_sums(const double* x, std::size_t rows, std::size_t cols, double* out) {
  NBE_DISPATCH(column_sums(x, rows, cols, out));
}

#undef NBE_DISPATCH

}  // namespace nbe::simd
