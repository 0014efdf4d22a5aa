#include "ekg/ops.hpp"

#include <algorithm>
#include <cmath>

#include "ekg/error.hpp"
#include "ekg/kernels/kernels.hpp"

namespace ekg {

namespace {

template <typename T>
bool track(Tape<T>* tape, const Tensor<T>& out) {
  return tape != nullptr && out.requires_grad();
}

struct AxisSplit {
  i64 outer, axis, inner;
};

AxisSplit split_at_axis(const Shape& shape, int axis) {
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape));
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
    s.inner *= shape[i];
  return s;
}

}  // namespace

template <typename T>
Tensor<T> gelu(Tape<T>* tape, const Tensor<T>& x) {
  x.check_finite("gelu");
  Tensor<T> y(x.shape());
  Tensor<T> cdf(x.shape());
  kern::gelu_forward(x.numel(), x.data(), y.data(), cdf.data());
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    Tensor<T> tx = x, ty = y;
    tape->record([tx, cdf, ty]() mutable {
      kern::gelu_backward(tx.numel(), tx.data(), cdf.data(), ty.grad(), tx.grad());
    });
  }
  return y;
}

template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, BatchNorm<T>& bn, bool training,
                     T momentum, T eps) {
  if (x.rank() < 2) throw ShapeError("batch_norm: input must have a channel axis (rank >= 2)");
  const i64 channels = x.dim(1);
  if (bn.channels() != channels)
    throw ShapeError("batch_norm: " + std::to_string(bn.channels()) +
                     " affine channels vs input " + shape_str(x.shape()));
  const i64 outer = x.dim(0);
  const i64 inner = x.numel() / (outer * channels);
  const i64 count = outer * inner;
  if (count == 0) throw ShapeError("batch_norm: empty batch");

  Tensor<T> mean({channels}), invstd({channels});
  if (training) {
    for (i64 c = 0; c < channels; ++c) {
      T s = T(0);
      for (i64 n = 0; n < outer; ++n)
        s += kern::vsum(inner, x.data() + (n * channels + c) * inner);
      mean[c] = s / T(count);
    }
    for (i64 c = 0; c < channels; ++c) {
      T s = T(0);
      const T mu = mean[c];
      for (i64 n = 0; n < outer; ++n) {
        const T* p = x.data() + (n * channels + c) * inner;
        for (i64 i = 0; i < inner; ++i) {
          const T d = p[i] - mu;
          s += d * d;
        }
      }
      const T var = s / T(count);
      invstd[c] = T(1) / std::sqrt(var + eps);
      // Running estimates use the unbiased variance, matching common practice.
      const T var_unbiased = count > 1 ? var * T(count) / T(count - 1) : var;
      bn.running_mean[c] = (T(1) - momentum) * bn.running_mean[c] + momentum * mu;
      bn.running_var[c] = (T(1) - momentum) * bn.running_var[c] + momentum * var_unbiased;
    }
  } else {
    for (i64 c = 0; c < channels; ++c) {
      mean[c] = bn.running_mean[c];
      invstd[c] = T(1) / std::sqrt(bn.running_var[c] + eps);
    }
  }

  Tensor<T> xhat(x.shape());
  Tensor<T> y(x.shape());
  for (i64 n = 0; n < outer; ++n) {
    for (i64 c = 0; c < channels; ++c) {
      const i64 off = (n * channels + c) * inner;
      const T mu = mean[c], is = invstd[c], g = bn.gamma[c], b = bn.beta[c];
      const T* px = x.data() + off;
      T* ph = xhat.data() + off;
      T* py = y.data() + off;
      for (i64 i = 0; i < inner; ++i) {
        ph[i] = (px[i] - mu) * is;
        py[i] = g * ph[i] + b;
      }
    }
  }
  y.check_finite("batch_norm");

  const bool need = tape && (x.requires_grad() || bn.gamma.requires_grad() ||
                             bn.beta.requires_grad());
  if (need) {
    y.set_requires_grad(true);
    Tensor<T> gamma = bn.gamma, beta = bn.beta;  // shared handles
    Tensor<T> xh = xhat, is = invstd;
    Tensor<T> xin = x;
    Tensor<T> yout = y;
    tape->record([xin, gamma, beta, xh, is, yout, outer, channels, inner, count,
                  training]() mutable {
      const T* gy = yout.grad();
      for (i64 c = 0; c < channels; ++c) {
        T sum_gy = T(0), sum_gy_xh = T(0);
        for (i64 n = 0; n < outer; ++n) {
          const i64 off = (n * channels + c) * inner;
          sum_gy += kern::vsum(inner, gy + off);
          sum_gy_xh += kern::vdot(inner, gy + off, xh.data() + off);
        }
        if (beta.requires_grad()) beta.grad()[c] += sum_gy;
        if (gamma.requires_grad()) gamma.grad()[c] += sum_gy_xh;
        if (xin.requires_grad()) {
          const T g = gamma[c] * is[c];
          if (training) {
            const T m_gy = sum_gy / T(count);
            const T m_gy_xh = sum_gy_xh / T(count);
            for (i64 n = 0; n < outer; ++n) {
              const i64 off = (n * channels + c) * inner;
              const T* pgy = gy + off;
              const T* ph = xh.data() + off;
              T* pgx = xin.grad() + off;
              for (i64 i = 0; i < inner; ++i)
                pgx[i] += g * (pgy[i] - m_gy - ph[i] * m_gy_xh);
            }
          } else {
            for (i64 n = 0; n < outer; ++n) {
              const i64 off = (n * channels + c) * inner;
              kern::vaxpy(inner, g, gy + off, xin.grad() + off);
            }
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> softmax_with_temperature(Tape<T>* tape, const Tensor<T>& logits, T tau,
                                   int axis) {
  if (!(tau > T(0))) throw ParamError("softmax temperature must be positive");
  const AxisSplit sp = split_at_axis(logits.shape(), axis);
  Tensor<T> y(logits.shape());
  for (i64 o = 0; o < sp.outer; ++o) {
    for (i64 i = 0; i < sp.inner; ++i) {
      const i64 base = o * sp.axis * sp.inner + i;
      T mx = logits[base];
      for (i64 a = 1; a < sp.axis; ++a)
        mx = std::max(mx, logits[base + a * sp.inner]);
      T denom = T(0);
      for (i64 a = 0; a < sp.axis; ++a) {
        const T e = std::exp((logits[base + a * sp.inner] - mx) / tau);
        y[base + a * sp.inner] = e;
        denom += e;
      }
      for (i64 a = 0; a < sp.axis; ++a) y[base + a * sp.inner] /= denom;
    }
  }
  y.check_finite("softmax_with_temperature");
  if (tape && logits.requires_grad()) {
    y.set_requires_grad(true);
    Tensor<T> z = logits, s = y;
    tape->record([z, s, tau, sp]() mutable {
      const T* gy = s.grad();
      for (i64 o = 0; o < sp.outer; ++o) {
        for (i64 i = 0; i < sp.inner; ++i) {
          const i64 base = o * sp.axis * sp.inner + i;
          T dot = T(0);
          for (i64 a = 0; a < sp.axis; ++a) {
            const i64 j = base + a * sp.inner;
            dot += gy[j] * s[j];
          }
          for (i64 a = 0; a < sp.axis; ++a) {
            const i64 j = base + a * sp.inner;
            z.grad()[j] += s[j] * (gy[j] - dot) / tau;
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> adaptive_avg_pool3d_to_unit(Tape<T>* tape, const Tensor<T>& x) {
  require_rank(x, 5, "adaptive_avg_pool3d_to_unit");
  const i64 bc = x.dim(0) * x.dim(1);
  const i64 inner = x.dim(2) * x.dim(3) * x.dim(4);
  Tensor<T> y({x.dim(0), x.dim(1), 1, 1, 1});
  for (i64 j = 0; j < bc; ++j)
    y[j] = kern::vsum(inner, x.data() + j * inner) / T(inner);
  y.check_finite("adaptive_avg_pool3d_to_unit");
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    Tensor<T> xin = x, yout = y;
    tape->record([xin, yout, bc, inner]() mutable {
      // Gradient mass spreads uniformly over the pooled window.
      for (i64 j = 0; j < bc; ++j) {
        const T g = yout.grad()[j] / T(inner);
        T* gx = xin.grad() + j * inner;
        for (i64 i = 0; i < inner; ++i) gx[i] += g;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> avg_pool3d_window(Tape<T>* tape, const Tensor<T>& x, i64 factor) {
  if (factor < 1) throw ParamError("avg_pool3d_window: factor must be >= 1");
  if (factor == 1) return x;
  require_rank(x, 5, "avg_pool3d_window");
  const i64 B = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const i64 OD = (D + factor - 1) / factor;
  const i64 OH = (H + factor - 1) / factor;
  const i64 OW = (W + factor - 1) / factor;
  Tensor<T> y({B, C, OD, OH, OW});
  const T* px = x.data();
  T* py = y.data();
  for (i64 nc = 0; nc < B * C; ++nc) {
    const T* in = px + nc * D * H * W;
    T* out = py + nc * OD * OH * OW;
    for (i64 od = 0; od < OD; ++od) {
      const i64 d0 = od * factor, d1 = std::min(d0 + factor, D);
      for (i64 oh = 0; oh < OH; ++oh) {
        const i64 h0 = oh * factor, h1 = std::min(h0 + factor, H);
        for (i64 ow = 0; ow < OW; ++ow) {
          const i64 w0 = ow * factor, w1 = std::min(w0 + factor, W);
          T acc = T(0);
          for (i64 d = d0; d < d1; ++d)
            for (i64 h = h0; h < h1; ++h)
              for (i64 w = w0; w < w1; ++w) acc += in[(d * H + h) * W + w];
          out[(od * OH + oh) * OW + ow] =
              acc / T((d1 - d0) * (h1 - h0) * (w1 - w0));
        }
      }
    }
  }
  y.check_finite("avg_pool3d_window");
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    Tensor<T> xin = x, yout = y;
    tape->record([xin, yout, factor, B, C, D, H, W, OD, OH, OW]() mutable {
      const T* gy = yout.grad();
      T* gx = xin.grad();
      for (i64 nc = 0; nc < B * C; ++nc) {
        const T* gout = gy + nc * OD * OH * OW;
        T* gin = gx + nc * D * H * W;
        for (i64 od = 0; od < OD; ++od) {
          const i64 d0 = od * factor, d1 = std::min(d0 + factor, D);
          for (i64 oh = 0; oh < OH; ++oh) {
            const i64 h0 = oh * factor, h1 = std::min(h0 + factor, H);
            for (i64 ow = 0; ow < OW; ++ow) {
              const i64 w0 = ow * factor, w1 = std::min(w0 + factor, W);
              const T g = gout[(od * OH + oh) * OW + ow] /
                          T((d1 - d0) * (h1 - h0) * (w1 - w0));
              for (i64 d = d0; d < d1; ++d)
                for (i64 h = h0; h < h1; ++h)
                  for (i64 w = w0; w < w1; ++w) gin[(d * H + h) * W + w] += g;
            }
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const i64 M = a.dim(0), K = a.dim(1), N = b.dim(1);
  if (b.dim(0) != K)
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> c({M, N});
  kern::gemm_nn(M, N, K, a.data(), K, b.data(), N, T(0), c.data(), N);
  c.check_finite("matmul");
  if (tape && any_requires_grad(a, b)) {
    c.set_requires_grad(true);
    Tensor<T> ta = a, tb = b, tc = c;
    tape->record([ta, tb, tc, M, N, K]() mutable {
      if (ta.requires_grad())
        kern::gemm_nt(M, K, N, tc.grad(), N, tb.data(), N, T(1), ta.grad(), K);
      if (tb.requires_grad())
        kern::gemm_tn(K, N, M, ta.data(), K, tc.grad(), N, T(1), tb.grad(), N);
    });
  }
  return c;
}

template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w,
                 const std::type_identity_t<Tensor<T>>* bias) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const i64 B = x.dim(0), F = x.dim(1), O = w.dim(0);
  if (w.dim(1) != F)
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(w.shape()));
  if (bias && bias->numel() != O) throw ShapeError("linear: bias length mismatch");
  Tensor<T> y({B, O});
  kern::gemm_nt(B, O, F, x.data(), F, w.data(), F, T(0), y.data(), O);
  if (bias)
    for (i64 n = 0; n < B; ++n) kern::vadd(O, y.data() + n * O, bias->data(), y.data() + n * O);
  y.check_finite("linear");
  const bool need =
      tape && (x.requires_grad() || w.requires_grad() || (bias && bias->requires_grad()));
  if (need) {
    y.set_requires_grad(true);
    Tensor<T> tx = x, tw = w, ty = y;
    Tensor<T> tb = bias ? *bias : Tensor<T>();
    tape->record([tx, tw, tb, ty, B, F, O]() mutable {
      if (tx.requires_grad())
        kern::gemm_nn(B, F, O, ty.grad(), O, tw.data(), F, T(1), tx.grad(), F);
      if (tw.requires_grad())
        kern::gemm_tn(O, F, B, ty.grad(), O, tx.data(), F, T(1), tw.grad(), F);
      if (tb.defined() && tb.requires_grad())
        for (i64 n = 0; n < B; ++n) kern::vadd(O, tb.grad(), ty.grad() + n * O, tb.grad());
    });
  }
  return y;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& ref = xs.front().shape();
  if (ref.size() < 2) throw ShapeError("concat_channels: inputs need rank >= 2");
  i64 total_c = 0;
  for (const auto& x : xs) {
    if (x.rank() != static_cast<int>(ref.size()))
      throw ShapeError("concat_channels: rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d)
      if (d != 1 && x.shape()[d] != ref[d])
        throw ShapeError("concat_channels: extent mismatch at axis " + std::to_string(d));
    total_c += x.dim(1);
  }
  Shape out_shape = ref;
  out_shape[1] = total_c;
  const i64 outer = ref[0];
  i64 inner = 1;
  for (std::size_t d = 2; d < ref.size(); ++d) inner *= ref[d];

  Tensor<T> y(out_shape);
  bool needs = false;
  for (const auto& x : xs) needs = needs || x.requires_grad();
  for (i64 n = 0; n < outer; ++n) {
    i64 c_off = 0;
    for (const auto& x : xs) {
      const i64 cx = x.dim(1);
      std::copy_n(x.data() + n * cx * inner, cx * inner,
                  y.data() + (n * total_c + c_off) * inner);
      c_off += cx;
    }
  }
  if (tape && needs) {
    y.set_requires_grad(true);
    std::vector<Tensor<T>> srcs = xs;
    Tensor<T> ty = y;
    tape->record([srcs, ty, outer, inner, total_c]() mutable {
      const T* gy = ty.grad();
      for (i64 n = 0; n < outer; ++n) {
        i64 c_off = 0;
        for (auto& x : srcs) {
          const i64 cx = x.dim(1);
          if (x.requires_grad()) {
            const T* src = gy + (n * total_c + c_off) * inner;
            T* dst = x.grad() + n * cx * inner;
            kern::vadd(cx * inner, dst, src, dst);
          }
          c_off += cx;
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> y(a.shape());
  kern::vadd(a.numel(), a.data(), b.data(), y.data());
  y.check_finite("add");
  if (tape && any_requires_grad(a, b)) {
    y.set_requires_grad(true);
    Tensor<T> ta = a, tb = b, ty = y;
    tape->record([ta, tb, ty]() mutable {
      if (ta.requires_grad())
        kern::vadd(ta.numel(), ta.grad(), ty.grad(), ta.grad());
      if (tb.requires_grad())
        kern::vadd(tb.numel(), tb.grad(), ty.grad(), tb.grad());
    });
  }
  return y;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> y(a.shape());
  kern::vmul(a.numel(), a.data(), b.data(), y.data());
  y.check_finite("mul");
  if (tape && any_requires_grad(a, b)) {
    y.set_requires_grad(true);
    Tensor<T> ta = a, tb = b, ty = y;
    tape->record([ta, tb, ty]() mutable {
      const i64 n = ta.numel();
      if (ta.requires_grad())
        for (i64 i = 0; i < n; ++i) ta.grad()[i] += ty.grad()[i] * tb[i];
      if (tb.requires_grad())
        for (i64 i = 0; i < n; ++i) tb.grad()[i] += ty.grad()[i] * ta[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> scalar_scale(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& s) {
  if (s.numel() != 1) throw ShapeError("scalar_scale: scale must be one element");
  Tensor<T> y(x.shape());
  const T sv = s[0];
  for (i64 i = 0; i < x.numel(); ++i) y[i] = sv * x[i];
  y.check_finite("scalar_scale");
  if (tape && any_requires_grad(x, s)) {
    y.set_requires_grad(true);
    Tensor<T> tx = x, ts = s, ty = y;
    tape->record([tx, ts, ty, sv]() mutable {
      if (tx.requires_grad()) kern::vaxpy(tx.numel(), sv, ty.grad(), tx.grad());
      if (ts.requires_grad()) ts.grad()[0] += kern::vdot(tx.numel(), ty.grad(), tx.data());
    });
  }
  return y;
}

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> y = Tensor<T>::scalar(kern::vsum(x.numel(), x.data()));
  y.check_finite("sum_all");
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    Tensor<T> tx = x, ty = y;
    tape->record([tx, ty]() mutable {
      const T g = ty.grad()[0];
      for (i64 i = 0; i < tx.numel(); ++i) tx.grad()[i] += g;
    });
  }
  return y;
}

template <typename T>
Tensor<T> cross_entropy(Tape<T>* tape, const Tensor<T>& logits,
                        const std::vector<int>& targets) {
  require_rank(logits, 2, "cross_entropy");
  const i64 B = logits.dim(0), C = logits.dim(1);
  if (static_cast<i64>(targets.size()) != B)
    throw ShapeError("cross_entropy: batch size vs target count");
  for (int t : targets)
    if (t < 0 || t >= C)
      throw IndexError("cross_entropy: target " + std::to_string(t) +
                       " outside [0, " + std::to_string(C) + ")");
  Tensor<T> probs({B, C});
  T loss = T(0);
  for (i64 n = 0; n < B; ++n) {
    const T* z = logits.data() + n * C;
    T mx = z[0];
    for (i64 c = 1; c < C; ++c) mx = std::max(mx, z[c]);
    T denom = T(0);
    for (i64 c = 0; c < C; ++c) {
      const T e = std::exp(z[c] - mx);
      probs[n * C + c] = e;
      denom += e;
    }
    for (i64 c = 0; c < C; ++c) probs[n * C + c] /= denom;
    loss += std::log(denom) + mx - z[targets[static_cast<std::size_t>(n)]];
  }
  Tensor<T> y = Tensor<T>::scalar(loss / T(B));
  y.check_finite("cross_entropy");
  if (tape && logits.requires_grad()) {
    y.set_requires_grad(true);
    Tensor<T> tz = logits, ty = y;
    std::vector<int> tg = targets;
    tape->record([tz, probs, tg, ty, B, C]() mutable {
      const T g = ty.grad()[0] / T(B);
      for (i64 n = 0; n < B; ++n) {
        for (i64 c = 0; c < C; ++c) {
          const T ind = (c == tg[static_cast<std::size_t>(n)]) ? T(1) : T(0);
          tz.grad()[n * C + c] += g * (probs[n * C + c] - ind);
        }
      }
    });
  }
  return y;
}

#define EKG_INSTANTIATE_OPS(T)                                                            \
  template Tensor<T> gelu<T>(Tape<T>*, const Tensor<T>&);                                 \
  template Tensor<T> batch_norm<T>(Tape<T>*, const Tensor<T>&, BatchNorm<T>&, bool, T,    \
                                   T);                                                    \
  template Tensor<T> softmax_with_temperature<T>(Tape<T>*, const Tensor<T>&, T, int);     \
  template Tensor<T> adaptive_avg_pool3d_to_unit<T>(Tape<T>*, const Tensor<T>&);          \
  template Tensor<T> avg_pool3d_window<T>(Tape<T>*, const Tensor<T>&, i64);               \
  template Tensor<T> matmul<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> linear<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&,              \
                               const std::type_identity_t<Tensor<T>>*);                   \
  template Tensor<T> concat_channels<T>(Tape<T>*, const std::vector<Tensor<T>>&);         \
  template Tensor<T> add<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> mul<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> scalar_scale<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> sum_all<T>(Tape<T>*, const Tensor<T>&);                              \
  template Tensor<T> cross_entropy<T>(Tape<T>*, const Tensor<T>&,                         \
                                      const std::vector<int>&);

EKG_INSTANTIATE_OPS(float)
EKG_INSTANTIATE_OPS(double)
#undef EKG_INSTANTIATE_OPS

}  // namespace ekg
