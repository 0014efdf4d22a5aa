#pragma once

// Internal declarations shared by the dispatcher and the per-backend
// translation units. Not installed; include ekg/kernels/kernels.hpp instead.

#include <cstdint>

namespace ekg::kern {

#define EKG_KERNEL_DECLS(T)                                                               \
  void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,                \
               std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c,              \
               std::int64_t ldc);                                                         \
  void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,                \
               std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c,              \
               std::int64_t ldc);                                                         \
  void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,                \
               std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c,              \
               std::int64_t ldc);                                                         \
  void vadd(std::int64_t n, const T* a, const T* b, T* out);                              \
  void vmul(std::int64_t n, const T* a, const T* b, T* out);                              \
  void vaxpy(std::int64_t n, T alpha, const T* x, T* y);                                  \
  void vscale(std::int64_t n, T alpha, T* x);                                             \
  T vsum(std::int64_t n, const T* x);                                                     \
  T vdot(std::int64_t n, const T* a, const T* b);

namespace scalar {
EKG_KERNEL_DECLS(float)
EKG_KERNEL_DECLS(double)
void gelu_forward(std::int64_t n, const float* x, float* y, float* cdf);
void gelu_forward(std::int64_t n, const double* x, double* y, double* cdf);
void gelu_backward(std::int64_t n, const float* x, const float* cdf, const float* gy,
                   float* gx);
void gelu_backward(std::int64_t n, const double* x, const double* cdf, const double* gy,
                   double* gx);
}  // namespace scalar

#ifdef EKG_HAVE_AVX2
namespace avx2 {
EKG_KERNEL_DECLS(float)
EKG_KERNEL_DECLS(double)
// f32 only; the f64 GELU stays on the scalar path (std::erf).
void gelu_forward(std::int64_t n, const float* x, float* y, float* cdf);
void gelu_backward(std::int64_t n, const float* x, const float* cdf, const float* gy,
                   float* gx);
}  // namespace avx2
#endif

#undef EKG_KERNEL_DECLS

}  // namespace ekg::kern
