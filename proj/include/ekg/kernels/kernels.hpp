#pragma once

#include <cstdint>

namespace ekg::kern {

// Which implementation family the arithmetic kernels run on. The backend
// is chosen once at startup (AVX2 when the CPU supports it, scalar
// otherwise) and can be pinned via set_backend() or the environment
// variable EKG_KERNEL_BACKEND={scalar,avx2}. Scalar and AVX2 variants are
// equivalence-tested against each other; within one process the choice is
// fixed unless a test overrides it, so results stay reproducible.
enum class Backend { Scalar, Avx2 };

bool cpu_has_avx2();
Backend active_backend();
void set_backend(Backend b);  // throws ParamError if unsupported on this host
const char* backend_name(Backend b);

// Row-major GEMM trio. All forms compute C = beta*C + <product> with leading
// dimensions in elements. They cover every matrix product in the engine:
//   nn:  C[MxN] = A[MxK] * B[KxN]
//   nt:  C[MxN] = A[MxK] * B^T          (B stored [NxK])
//   tn:  C[MxN] = A^T    * B[KxN]       (A stored [KxM])
// Accumulation over k is sequential per output element in every backend.
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const float* a,
             std::int64_t lda, const float* b, std::int64_t ldb, float beta, float* c,
             std::int64_t ldc);
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
             std::int64_t lda, const double* b, std::int64_t ldb, double beta, double* c,
             std::int64_t ldc);
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const float* a,
             std::int64_t lda, const float* b, std::int64_t ldb, float beta, float* c,
             std::int64_t ldc);
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
             std::int64_t lda, const double* b, std::int64_t ldb, double beta, double* c,
             std::int64_t ldc);
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const float* a,
             std::int64_t lda, const float* b, std::int64_t ldb, float beta, float* c,
             std::int64_t ldc);
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
             std::int64_t lda, const double* b, std::int64_t ldb, double beta, double* c,
             std::int64_t ldc);

// Elementwise and reduction kernels. Reductions use a fixed lane tree so a
// given backend always sums in the same order.
void vadd(std::int64_t n, const float* a, const float* b, float* out);
void vadd(std::int64_t n, const double* a, const double* b, double* out);
void vmul(std::int64_t n, const float* a, const float* b, float* out);
void vmul(std::int64_t n, const double* a, const double* b, double* out);
void vaxpy(std::int64_t n, float alpha, const float* x, float* y);  // y += alpha*x
void vaxpy(std::int64_t n, double alpha, const double* x, double* y);
void vscale(std::int64_t n, float alpha, float* x);
void vscale(std::int64_t n, double alpha, double* x);
float vsum(std::int64_t n, const float* x);
double vsum(std::int64_t n, const double* x);
float vdot(std::int64_t n, const float* a, const float* b);
double vdot(std::int64_t n, const double* a, const double* b);

// GELU in the exact Gaussian-CDF form: y = x * Phi(x), with Phi(x) =
// 0.5*(1 + erf(x/sqrt(2))). cdf keeps Phi(x) for the backward pass.
// The f32 AVX2 variant evaluates erf by polynomial (abs err < 2e-7);
// f64 always goes through std::erf.
void gelu_forward(std::int64_t n, const float* x, float* y, float* cdf);
void gelu_forward(std::int64_t n, const double* x, double* y, double* cdf);
// gx += gy * (Phi(x) + x * phi(x))
void gelu_backward(std::int64_t n, const float* x, const float* cdf, const float* gy,
                   float* gx);
void gelu_backward(std::int64_t n, const double* x, const double* cdf, const double* gy,
                   double* gx);

}  // namespace ekg::kern
