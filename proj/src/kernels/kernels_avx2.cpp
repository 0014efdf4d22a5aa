// AVX2/FMA kernel variants. Compiled with -mavx2 -mfma in its own TU and
// reached only through the dispatcher, so the rest of the library builds
// and runs on any CPU.

#ifdef EKG_HAVE_AVX2

#include <immintrin.h>

#include <cmath>
#include <cstdint>

#include "kernels_impl.hpp"

namespace ekg::kern::avx2 {

namespace {

using std::int64_t;

inline __m256i tail_mask8(int64_t rem) {
  alignas(32) static const std::int32_t bits[16] = {-1, -1, -1, -1, -1, -1, -1, -1,
                                                    0,  0,  0,  0,  0,  0,  0,  0};
  return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(bits + 8 - rem));
}

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_add_ps(s, _mm_movehl_ps(s, s));
  s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
  return _mm_cvtss_f32(s);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  __m128d s = _mm_add_pd(lo, hi);
  s = _mm_add_sd(s, _mm_unpackhi_pd(s, s));
  return _mm_cvtsd_f64(s);
}

// ---------------------------------------------------------------------------
// GEMM f32: 4-row x 8-column register tile, k innermost, FMA accumulation.

template <int R>
inline void nn_tile_f32(int64_t n, int64_t k, const float* a, int64_t lda, const float* b,
                        int64_t ldb, float beta, float* c, int64_t ldc) {
  int64_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256 acc[R];
    for (int r = 0; r < R; ++r)
      acc[r] = (beta == 0.0f) ? _mm256_setzero_ps()
                              : _mm256_mul_ps(_mm256_set1_ps(beta),
                                              _mm256_loadu_ps(c + r * ldc + j));
    for (int64_t p = 0; p < k; ++p) {
      const __m256 bv = _mm256_loadu_ps(b + p * ldb + j);
      for (int r = 0; r < R; ++r)
        acc[r] = _mm256_fmadd_ps(_mm256_set1_ps(a[r * lda + p]), bv, acc[r]);
    }
    for (int r = 0; r < R; ++r) _mm256_storeu_ps(c + r * ldc + j, acc[r]);
  }
  if (j < n) {
    const __m256i mask = tail_mask8(n - j);
    __m256 acc[R];
    for (int r = 0; r < R; ++r)
      acc[r] = (beta == 0.0f)
                   ? _mm256_setzero_ps()
                   : _mm256_mul_ps(_mm256_set1_ps(beta),
                                   _mm256_maskload_ps(c + r * ldc + j, mask));
    for (int64_t p = 0; p < k; ++p) {
      const __m256 bv = _mm256_maskload_ps(b + p * ldb + j, mask);
      for (int r = 0; r < R; ++r)
        acc[r] = _mm256_fmadd_ps(_mm256_set1_ps(a[r * lda + p]), bv, acc[r]);
    }
    for (int r = 0; r < R; ++r) _mm256_maskstore_ps(c + r * ldc + j, mask, acc[r]);
  }
}

template <int R>
inline void nn_tile_f64(int64_t n, int64_t k, const double* a, int64_t lda,
                        const double* b, int64_t ldb, double beta, double* c,
                        int64_t ldc) {
  int64_t j = 0;
  for (; j + 4 <= n; j += 4) {
    __m256d acc[R];
    for (int r = 0; r < R; ++r)
      acc[r] = (beta == 0.0) ? _mm256_setzero_pd()
                             : _mm256_mul_pd(_mm256_set1_pd(beta),
                                             _mm256_loadu_pd(c + r * ldc + j));
    for (int64_t p = 0; p < k; ++p) {
      const __m256d bv = _mm256_loadu_pd(b + p * ldb + j);
      for (int r = 0; r < R; ++r)
        acc[r] = _mm256_fmadd_pd(_mm256_set1_pd(a[r * lda + p]), bv, acc[r]);
    }
    for (int r = 0; r < R; ++r) _mm256_storeu_pd(c + r * ldc + j, acc[r]);
  }
  for (; j < n; ++j) {
    for (int r = 0; r < R; ++r) {
      double acc = (beta == 0.0) ? 0.0 : beta * c[r * ldc + j];
      for (int64_t p = 0; p < k; ++p) acc = std::fma(a[r * lda + p], b[p * ldb + j], acc);
      c[r * ldc + j] = acc;
    }
  }
}

}  // namespace

void gemm_nn(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda, const float* b,
             int64_t ldb, float beta, float* c, int64_t ldc) {
  int64_t i = 0;
  for (; i + 4 <= m; i += 4)
    nn_tile_f32<4>(n, k, a + i * lda, lda, b, ldb, beta, c + i * ldc, ldc);
  for (; i + 2 <= m; i += 2)
    nn_tile_f32<2>(n, k, a + i * lda, lda, b, ldb, beta, c + i * ldc, ldc);
  for (; i < m; ++i)
    nn_tile_f32<1>(n, k, a + i * lda, lda, b, ldb, beta, c + i * ldc, ldc);
}

void gemm_nn(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda,
             const double* b, int64_t ldb, double beta, double* c, int64_t ldc) {
  int64_t i = 0;
  for (; i + 4 <= m; i += 4)
    nn_tile_f64<4>(n, k, a + i * lda, lda, b, ldb, beta, c + i * ldc, ldc);
  for (; i + 2 <= m; i += 2)
    nn_tile_f64<2>(n, k, a + i * lda, lda, b, ldb, beta, c + i * ldc, ldc);
  for (; i < m; ++i)
    nn_tile_f64<1>(n, k, a + i * lda, lda, b, ldb, beta, c + i * ldc, ldc);
}

// gemm_tn walks A transposed but streams B and C rows exactly like nn.

void gemm_tn(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda, const float* b,
             int64_t ldb, float beta, float* c, int64_t ldc) {
  for (int64_t i = 0; i < m; ++i) {
    float* crow = c + i * ldc;
    int64_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256 acc = (beta == 0.0f) ? _mm256_setzero_ps()
                                  : _mm256_mul_ps(_mm256_set1_ps(beta),
                                                  _mm256_loadu_ps(crow + j));
      for (int64_t p = 0; p < k; ++p)
        acc = _mm256_fmadd_ps(_mm256_set1_ps(a[p * lda + i]),
                              _mm256_loadu_ps(b + p * ldb + j), acc);
      _mm256_storeu_ps(crow + j, acc);
    }
    for (; j < n; ++j) {
      float acc = (beta == 0.0f) ? 0.0f : beta * crow[j];
      for (int64_t p = 0; p < k; ++p) acc = std::fma(a[p * lda + i], b[p * ldb + j], acc);
      crow[j] = acc;
    }
  }
}

void gemm_tn(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda,
             const double* b, int64_t ldb, double beta, double* c, int64_t ldc) {
  for (int64_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    int64_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d acc = (beta == 0.0) ? _mm256_setzero_pd()
                                  : _mm256_mul_pd(_mm256_set1_pd(beta),
                                                  _mm256_loadu_pd(crow + j));
      for (int64_t p = 0; p < k; ++p)
        acc = _mm256_fmadd_pd(_mm256_set1_pd(a[p * lda + i]),
                              _mm256_loadu_pd(b + p * ldb + j), acc);
      _mm256_storeu_pd(crow + j, acc);
    }
    for (; j < n; ++j) {
      double acc = (beta == 0.0) ? 0.0 : beta * crow[j];
      for (int64_t p = 0; p < k; ++p) acc = std::fma(a[p * lda + i], b[p * ldb + j], acc);
      crow[j] = acc;
    }
  }
}

// gemm_nt: every C element is a dot product of contiguous rows.

void gemm_nt(int64_t m, int64_t n, int64_t k, const float* a, int64_t lda, const float* b,
             int64_t ldb, float beta, float* c, int64_t ldc) {
  for (int64_t i = 0; i < m; ++i) {
    const float* arow = a + i * lda;
    for (int64_t j = 0; j < n; ++j) {
      const float* brow = b + j * ldb;
      __m256 acc = _mm256_setzero_ps();
      int64_t p = 0;
      for (; p + 8 <= k; p += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(arow + p), _mm256_loadu_ps(brow + p), acc);
      float sum = hsum(acc);
      for (; p < k; ++p) sum = std::fma(arow[p], brow[p], sum);
      float& out = c[i * ldc + j];
      out = (beta == 0.0f) ? sum : beta * out + sum;
    }
  }
}

void gemm_nt(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda,
             const double* b, int64_t ldb, double beta, double* c, int64_t ldc) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * lda;
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * ldb;
      __m256d acc = _mm256_setzero_pd();
      int64_t p = 0;
      for (; p + 4 <= k; p += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(arow + p), _mm256_loadu_pd(brow + p), acc);
      double sum = hsum(acc);
      for (; p < k; ++p) sum = std::fma(arow[p], brow[p], sum);
      double& out = c[i * ldc + j];
      out = (beta == 0.0) ? sum : beta * out + sum;
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise kernels.

#define EKG_EW_F32(name, expr_vec, expr_sca)                                              \
  void name(int64_t n, const float* a, const float* b, float* out) {                      \
    int64_t i = 0;                                                                        \
    for (; i + 8 <= n; i += 8) {                                                          \
      __m256 va = _mm256_loadu_ps(a + i);                                                 \
      __m256 vb = _mm256_loadu_ps(b + i);                                                 \
      _mm256_storeu_ps(out + i, expr_vec);                                                \
    }                                                                                     \
    for (; i < n; ++i) out[i] = expr_sca;                                                 \
  }                                                                                       \
  void name(int64_t n, const double* a, const double* b, double* out) {                   \
    int64_t i = 0;                                                                        \
    for (; i + 4 <= n; i += 4) {                                                          \
      __m256d va = _mm256_loadu_pd(a + i);                                                \
      __m256d vb = _mm256_loadu_pd(b + i);                                                \
      _mm256_storeu_pd(out + i, expr_vec##_d);                                            \
    }                                                                                     \
    for (; i < n; ++i) out[i] = expr_sca;                                                 \
  }

#define ADD_VEC _mm256_add_ps(va, vb)
#define ADD_VEC_d _mm256_add_pd(va, vb)
#define MUL_VEC _mm256_mul_ps(va, vb)
#define MUL_VEC_d _mm256_mul_pd(va, vb)
EKG_EW_F32(vadd, ADD_VEC, a[i] + b[i])
EKG_EW_F32(vmul, MUL_VEC, a[i] * b[i])
#undef ADD_VEC
#undef ADD_VEC_d
#undef MUL_VEC
#undef MUL_VEC_d
#undef EKG_EW_F32

void vaxpy(int64_t n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i),
                                            _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void vaxpy(int64_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void vscale(int64_t n, float alpha, float* x) {
  const __m256 va = _mm256_set1_ps(alpha);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(x + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

void vscale(int64_t n, double alpha, double* x) {
  const __m256d va = _mm256_set1_pd(alpha);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

float vsum(int64_t n, const float* x) {
  __m256 acc = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float sum = hsum(acc);
  for (; i < n; ++i) sum += x[i];
  return sum;
}

double vsum(int64_t n, const double* x) {
  __m256d acc = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double sum = hsum(acc);
  for (; i < n; ++i) sum += x[i];
  return sum;
}

float vdot(int64_t n, const float* a, const float* b) {
  __m256 acc = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
  float sum = hsum(acc);
  for (; i < n; ++i) sum = std::fma(a[i], b[i], sum);
  return sum;
}

double vdot(int64_t n, const double* a, const double* b) {
  __m256d acc = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  double sum = hsum(acc);
  for (; i < n; ++i) sum = std::fma(a[i], b[i], sum);
  return sum;
}

// ---------------------------------------------------------------------------
// Vector exp/erf (f32) and the GELU built on them.

namespace {

// Cephes-style expf, ~2 ulp over the clamped range.
inline __m256 exp256_ps(__m256 x) {
  const __m256 hi = _mm256_set1_ps(88.3762626647949f);
  const __m256 lo = _mm256_set1_ps(-87.3365478515625f);
  x = _mm256_min_ps(_mm256_max_ps(x, lo), hi);

  const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
  __m256 fx = _mm256_fmadd_ps(x, log2e, _mm256_set1_ps(0.5f));
  fx = _mm256_floor_ps(fx);

  // x -= fx * ln2, in two pieces for accuracy
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(0.693359375f), x);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(-2.12194440e-4f), x);

  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
  y = _mm256_fmadd_ps(y, _mm256_mul_ps(x, x), _mm256_add_ps(x, _mm256_set1_ps(1.0f)));

  const __m256i n = _mm256_cvtps_epi32(fx);
  const __m256i pow2n =
      _mm256_slli_epi32(_mm256_add_epi32(n, _mm256_set1_epi32(127)), 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(pow2n));
}

// Abramowitz-Stegun 7.1.26 rational erf, abs error < 1.5e-7.
inline __m256 erf256_ps(__m256 x) {
  const __m256 sign_mask = _mm256_set1_ps(-0.0f);
  const __m256 sign = _mm256_and_ps(x, sign_mask);
  const __m256 z = _mm256_andnot_ps(sign_mask, x);

  const __m256 t = _mm256_div_ps(
      _mm256_set1_ps(1.0f),
      _mm256_fmadd_ps(_mm256_set1_ps(0.3275911f), z, _mm256_set1_ps(1.0f)));

  __m256 poly = _mm256_set1_ps(1.061405429f);
  poly = _mm256_fmadd_ps(poly, t, _mm256_set1_ps(-1.453152027f));
  poly = _mm256_fmadd_ps(poly, t, _mm256_set1_ps(1.421413741f));
  poly = _mm256_fmadd_ps(poly, t, _mm256_set1_ps(-0.284496736f));
  poly = _mm256_fmadd_ps(poly, t, _mm256_set1_ps(0.254829592f));
  poly = _mm256_mul_ps(poly, t);

  const __m256 e = exp256_ps(_mm256_xor_ps(_mm256_mul_ps(z, z), sign_mask));
  const __m256 r = _mm256_fnmadd_ps(poly, e, _mm256_set1_ps(1.0f));
  return _mm256_or_ps(r, sign);
}

inline void gelu_block(__m256 x, __m256& y, __m256& phi) {
  const __m256 inv_sqrt2 = _mm256_set1_ps(0.70710678118654752440f);
  phi = _mm256_mul_ps(_mm256_set1_ps(0.5f),
                      _mm256_add_ps(_mm256_set1_ps(1.0f),
                                    erf256_ps(_mm256_mul_ps(x, inv_sqrt2))));
  y = _mm256_mul_ps(x, phi);
}

}  // namespace

void gelu_forward(int64_t n, const float* x, float* y, float* cdf) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 yv, pv;
    gelu_block(_mm256_loadu_ps(x + i), yv, pv);
    _mm256_storeu_ps(y + i, yv);
    _mm256_storeu_ps(cdf + i, pv);
  }
  if (i < n) {
    const __m256i mask = tail_mask8(n - i);
    __m256 yv, pv;
    gelu_block(_mm256_maskload_ps(x + i, mask), yv, pv);
    _mm256_maskstore_ps(y + i, mask, yv);
    _mm256_maskstore_ps(cdf + i, mask, pv);
  }
}

void gelu_backward(int64_t n, const float* x, const float* cdf, const float* gy,
                   float* gx) {
  const __m256 inv_sqrt2pi = _mm256_set1_ps(0.39894228040143267794f);
  const __m256 neg_half = _mm256_set1_ps(-0.5f);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 xv = _mm256_loadu_ps(x + i);
    const __m256 pdf = _mm256_mul_ps(
        inv_sqrt2pi, exp256_ps(_mm256_mul_ps(neg_half, _mm256_mul_ps(xv, xv))));
    const __m256 slope =
        _mm256_fmadd_ps(xv, pdf, _mm256_loadu_ps(cdf + i));
    _mm256_storeu_ps(gx + i, _mm256_fmadd_ps(_mm256_loadu_ps(gy + i), slope,
                                             _mm256_loadu_ps(gx + i)));
  }
  if (i < n) {
    const __m256i mask = tail_mask8(n - i);
    const __m256 xv = _mm256_maskload_ps(x + i, mask);
    const __m256 pdf = _mm256_mul_ps(
        inv_sqrt2pi, exp256_ps(_mm256_mul_ps(neg_half, _mm256_mul_ps(xv, xv))));
    const __m256 slope = _mm256_fmadd_ps(xv, pdf, _mm256_maskload_ps(cdf + i, mask));
    _mm256_maskstore_ps(gx + i, mask,
                        _mm256_fmadd_ps(_mm256_maskload_ps(gy + i, mask), slope,
                                        _mm256_maskload_ps(gx + i, mask)));
  }
}

}  // namespace ekg::kern::avx2

#endif  // EKG_HAVE_AVX2
