// Scalar reference kernels. Deliberately plain loops: these define the
// semantics the SIMD variants are tested against.

#include <cmath>

#include "kernels_impl.hpp"

namespace ekg::kern::scalar {

namespace {

template <typename T>
void gemm_nn_impl(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
                  std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c,
                  std::int64_t ldc) {
  for (std::int64_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (beta == T(0)) {
      for (std::int64_t j = 0; j < n; ++j) crow[j] = T(0);
    } else if (beta != T(1)) {
      for (std::int64_t j = 0; j < n; ++j) crow[j] *= beta;
    }
    for (std::int64_t p = 0; p < k; ++p) {
      const T av = a[i * lda + p];
      const T* brow = b + p * ldb;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt_impl(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
                  std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c,
                  std::int64_t ldc) {
  for (std::int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * lda;
    for (std::int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * ldb;
      T acc = T(0);
      for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      T& out = c[i * ldc + j];
      out = (beta == T(0)) ? acc : beta * out + acc;
    }
  }
}

template <typename T>
void gemm_tn_impl(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
                  std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c,
                  std::int64_t ldc) {
  // A is stored [k x m]; row i of C accumulates sum_p A[p][i] * B[p][:].
  for (std::int64_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (beta == T(0)) {
      for (std::int64_t j = 0; j < n; ++j) crow[j] = T(0);
    } else if (beta != T(1)) {
      for (std::int64_t j = 0; j < n; ++j) crow[j] *= beta;
    }
    for (std::int64_t p = 0; p < k; ++p) {
      const T av = a[p * lda + i];
      const T* brow = b + p * ldb;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gelu_forward_impl(std::int64_t n, const T* x, T* y, T* cdf) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440L);
  for (std::int64_t i = 0; i < n; ++i) {
    const T phi = T(0.5) * (T(1) + std::erf(x[i] * kInvSqrt2));
    cdf[i] = phi;
    y[i] = x[i] * phi;
  }
}

template <typename T>
void gelu_backward_impl(std::int64_t n, const T* x, const T* cdf, const T* gy, T* gx) {
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794L);
  for (std::int64_t i = 0; i < n; ++i) {
    const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * x[i] * x[i]);
    gx[i] += gy[i] * (cdf[i] + x[i] * pdf);
  }
}

}  // namespace

#define EKG_SCALAR_DEFS(T)                                                                \
  void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,                \
               std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c,              \
               std::int64_t ldc) {                                                        \
    gemm_nn_impl(m, n, k, a, lda, b, ldb, beta, c, ldc);                                  \
  }                                                                                       \
  void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,                \
               std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c,              \
               std::int64_t ldc) {                                                        \
    gemm_nt_impl(m, n, k, a, lda, b, ldb, beta, c, ldc);                                  \
  }                                                                                       \
  void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,                \
               std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c,              \
               std::int64_t ldc) {                                                        \
    gemm_tn_impl(m, n, k, a, lda, b, ldb, beta, c, ldc);                                  \
  }                                                                                       \
  void vadd(std::int64_t n, const T* a, const T* b, T* out) {                             \
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];                            \
  }                                                                                       \
  void vmul(std::int64_t n, const T* a, const T* b, T* out) {                             \
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];                            \
  }                                                                                       \
  void vaxpy(std::int64_t n, T alpha, const T* x, T* y) {                                 \
    for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];                            \
  }                                                                                       \
  void vscale(std::int64_t n, T alpha, T* x) {                                            \
    for (std::int64_t i = 0; i < n; ++i) x[i] *= alpha;                                   \
  }                                                                                       \
  T vsum(std::int64_t n, const T* x) {                                                    \
    T acc = T(0);                                                                         \
    for (std::int64_t i = 0; i < n; ++i) acc += x[i];                                     \
    return acc;                                                                           \
  }                                                                                       \
  T vdot(std::int64_t n, const T* a, const T* b) {                                        \
    T acc = T(0);                                                                         \
    for (std::int64_t i = 0; i < n; ++i) acc += a[i] * b[i];                              \
    return acc;                                                                           \
  }

EKG_SCALAR_DEFS(float)
EKG_SCALAR_DEFS(double)
#undef EKG_SCALAR_DEFS

void gelu_forward(std::int64_t n, const float* x, float* y, float* cdf) {
  gelu_forward_impl(n, x, y, cdf);
}
void gelu_forward(std::int64_t n, const double* x, double* y, double* cdf) {
  gelu_forward_impl(n, x, y, cdf);
}
void gelu_backward(std::int64_t n, const float* x, const float* cdf, const float* gy,
                   float* gx) {
  gelu_backward_impl(n, x, cdf, gy, gx);
}
void gelu_backward(std::int64_t n, const double* x, const double* cdf, const double* gy,
                   double* gx) {
  gelu_backward_impl(n, x, cdf, gy, gx);
}

}  // namespace ekg::kern::scalar
