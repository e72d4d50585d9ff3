#pragma once
// Dense inner-loop kernels with a scalar reference path and an AVX2/FMA path
// selected at runtime. Every kernel in `simd::` forwards to the active table;
// `simd::scalar::` and `simd::avx2::` are exposed for equivalence tests.

#include <cstddef>

namespace nbe::simd {

enum class Isa { Scalar, Avx2 };

const char* isa_name(Isa isa);

/// Best ISA supported by the running CPU (and compiled in).
Isa detected_isa();
Isa active_isa();
/// Throws nbe::Error if `isa` is not supported on this machine.
void set_active_isa(Isa isa);

// C[m,n] = (accumulate ? C : 0) + A[m,k] * B[k,n]; row-major, leading dims given.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double* c,
          std::size_t ldc, bool accumulate);
// C[m,n] = (accumulate ? C : 0) + A^T B with A stored [k,m] (leading dim lda).
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double* c,
             std::size_t ldc, bool accumulate);
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* x, std::size_t n);
// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);
void add(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
// dx += dy * (x > 0)
void relu_backward(const double* x, const double* dy, double* dx, std::size_t n);
// y[r, :] += bias for every row
void add_rows(double* y, const double* bias, std::size_t rows, std::size_t cols);
// out[c] += sum_r x[r, c]
void column_sums(const double* x, std::size_t rows, std::size_t cols, double* out);

#define NBE_SIMD_DECLARE_KERNELS                                                  \
  void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a,        \
            std::size_t lda, const double* b, std::size_t ldb, double* c,        \
            std::size_t ldc, bool accumulate);                                   \
  void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,     \
               std::size_t lda, const double* b, std::size_t ldb, double* c,     \
               std::size_t ldc, bool accumulate);                                \
  double dot(const double* a, const double* b, std::size_t n);                   \
  double sum(const double* x, std::size_t n);                                    \
  void axpy(double alpha, const double* x, double* y, std::size_t n);            \
  void add(const double* a, const double* b, double* out, std::size_t n);        \
  void mul(const double* a, const double* b, double* out, std::size_t n);        \
  void relu(const double* x, double* out, std::size_t n);                        \
  void relu_backward(const double* x, const double* dy, double* dx,              \
                     std::size_t n);                                             \
  void add_rows(double* y, const double* bias, std::size_t rows,                 \
                std::size_t cols);                                               \
  void column_sums(const double* x, std::size_t rows, std::size_t cols,          \
                   double* out);

namespace scalar {
NBE_SIMD_DECLARE_KERNELS
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define NBE_HAVE_AVX2_KERNELS 1
namespace avx2 {
NBE_SIMD_DECLARE_KERNELS
}  // namespace avx2
#else
#define NBE_HAVE_AVX2_KERNELS 0
#endif

#undef NBE_SIMD_DECLARE_KERNELS

}  // namespace nbe::simd
