// Runtime backend selection for the arithmetic kernels.

#include "ekg/kernels/kernels.hpp"

#include <cstdlib>
#include <string>

#include "ekg/error.hpp"
#include "kernels_impl.hpp"

namespace ekg::kern {

bool cpu_has_avx2() {
#if defined(EKG_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

Backend pick_initial_backend() {
  if (const char* env = std::getenv("EKG_KERNEL_BACKEND")) {
    const std::string v(env);
    if (v == "scalar") return Backend::Scalar;
    if (v == "avx2") {
      if (!cpu_has_avx2())
        throw ParamError("EKG_KERNEL_BACKEND=avx2 but this CPU lacks AVX2/FMA");
      return Backend::Avx2;
    }
    throw ParamError("unknown EKG_KERNEL_BACKEND value '" + v + "'");
  }
  return cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
}

Backend& backend_state() {
  static Backend b = pick_initial_backend();
  return b;
}

}  // namespace

Backend active_backend() { return backend_state(); }

void set_backend(Backend b) {
  if (b == Backend::Avx2 && !cpu_has_avx2())
    throw ParamError("AVX2 backend requested but unsupported on this CPU");
  backend_state() = b;
}

const char* backend_name(Backend b) {
  return b == Backend::Avx2 ? "avx2" : "scalar";
}

#ifdef EKG_HAVE_AVX2
#define EKG_DISPATCH(call) \
  if (backend_state() == Backend::Avx2) return avx2::call; \
  return scalar::call;
#else
#define EKG_DISPATCH(call) return scalar::call;
#endif

#define EKG_GEMM_DEF(name, T)                                                             \
  void name(std::int64_t m, std::int64_t n, std::int64_t k, const T* a,                   \
            std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c,                 \
            std::int64_t ldc) {                                                           \
    EKG_DISPATCH(name(m, n, k, a, lda, b, ldb, beta, c, ldc))                             \
  }

EKG_GEMM_DEF(gemm_nn, float)
EKG_GEMM_DEF(gemm_nn, double)
EKG_GEMM_DEF(gemm_nt, float)
EKG_GEMM_DEF(gemm_nt, double)
EKG_GEMM_DEF(gemm_tn, float)
EKG_GEMM_DEF(gemm_tn, double)
#undef EKG_GEMM_DEF

#define EKG_EW2_DEF(name, T)                                                              \
  void name(std::int64_t n, const T* a, const T* b, T* out) {                             \
    EKG_DISPATCH(name(n, a, b, out))                                                      \
  }
EKG_EW2_DEF(vadd, float)
EKG_EW2_DEF(vadd, double)
EKG_EW2_DEF(vmul, float)
EKG_EW2_DEF(vmul, double)
#undef EKG_EW2_DEF

void vaxpy(std::int64_t n, float alpha, const float* x, float* y) {
  EKG_DISPATCH(vaxpy(n, alpha, x, y))
}
void vaxpy(std::int64_t n, double alpha, const double* x, double* y) {
  EKG_DISPATCH(vaxpy(n, alpha, x, y))
}
void vscale(std::int64_t n, float alpha, float* x) { EKG_DISPATCH(vscale(n, alpha, x)) }
void vscale(std::int64_t n, double alpha, double* x) { EKG_DISPATCH(vscale(n, alpha, x)) }
float vsum(std::int64_t n, const float* x) { EKG_DISPATCH(vsum(n, x)) }
double vsum(std::int64_t n, const double* x) { EKG_DISPATCH(vsum(n, x)) }
float vdot(std::int64_t n, const float* a, const float* b) { EKG_DISPATCH(vdot(n, a, b)) }
double vdot(std::int64_t n, const double* a, const double* b) {
  EKG_DISPATCH(vdot(n, a, b))
}

void gelu_forward(std::int64_t n, const float* x, float* y, float* cdf) {
  EKG_DISPATCH(gelu_forward(n, x, y, cdf))
}
void gelu_forward(std::int64_t n, const double* x, double* y, double* cdf) {
  // No AVX2 variant for f64: std::erf keeps the verification path exact.
  scalar::gelu_forward(n, x, y, cdf);
}
void gelu_backward(std::int64_t n, const float* x, const float* cdf, const float* gy,
                   float* gx) {
  EKG_DISPATCH(gelu_backward(n, x, cdf, gy, gx))
}
void gelu_backward(std::int64_t n, const double* x, const double* cdf, const double* gy,
                   double* gx) {
  scalar::gelu_backward(n, x, cdf, gy, gx);
}

#undef EKG_DISPATCH

}  // namespace ekg::kern
