#include "ekg/conv3d.hpp"

#include <cstring>

#include "ekg/error.hpp"
#include "ekg/kernels/kernels.hpp"

namespace ekg {

void ConvSpec::validate() const {
  if (in_channels <= 0 || out_channels <= 0)
    throw ShapeError("conv3d: channel counts must be positive");
  if (groups <= 0) throw ShapeError("conv3d: groups must be positive");
  if (in_channels % groups != 0 || out_channels % groups != 0)
    throw ShapeError("conv3d: groups=" + std::to_string(groups) +
                     " must divide in_channels=" + std::to_string(in_channels) +
                     " and out_channels=" + std::to_string(out_channels));
  for (int a = 0; a < 3; ++a) {
    if (kernel[a] < 1 || stride[a] < 1 || dilation[a] < 1 || padding[a] < 0)
      throw ShapeError("conv3d: invalid kernel/stride/dilation/padding on axis " +
                       std::to_string(a));
  }
}

std::array<i64, 3> ConvSpec::output_extents(const std::array<i64, 3>& in) const {
  std::array<i64, 3> out{};
  for (int a = 0; a < 3; ++a) {
    out[a] =
        (in[a] + 2 * padding[a] - dilation[a] * (kernel[a] - 1) - 1) / stride[a] + 1;
    if (in[a] + 2 * padding[a] - dilation[a] * (kernel[a] - 1) - 1 < 0 || out[a] < 1)
      throw ShapeError("conv3d: non-positive output extent on axis " + std::to_string(a));
  }
  return out;
}

namespace {

template <typename T>
void check_conv_args(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                     const ConvSpec& spec) {
  spec.validate();
  require_rank(x, 5, "conv3d");
  require_rank(w, 5, "conv3d weight");
  if (x.dim(1) != spec.in_channels)
    throw ShapeError("conv3d: input channels " + std::to_string(x.dim(1)) +
                     " != spec " + std::to_string(spec.in_channels));
  const Shape expect{spec.out_channels, spec.group_in_channels(), spec.kernel[0],
                     spec.kernel[1], spec.kernel[2]};
  if (w.shape() != expect)
    throw ShapeError("conv3d: weight " + shape_str(w.shape()) + " != expected " +
                     shape_str(expect));
  if (bias && bias->numel() != spec.out_channels)
    throw ShapeError("conv3d: bias length " + std::to_string(bias->numel()) +
                     " != out_channels " + std::to_string(spec.out_channels));
}

// Unpacks one (sample, group) into a [Cg*Sd*Sh*Sw] x [OD*OH*OW] matrix.
// Row order is (channel, kd, kh, kw); zero padding materializes as zeros.
// Spatial runs are short at patch scale, so plain loops beat memcpy here.
template <typename T>
void im2col(const T* x, i64 D, i64 H, i64 W, const ConvSpec& spec, i64 cg, i64 od, i64 oh,
            i64 ow, T* col) {
  const i64 n_sp = od * oh * ow;
  i64 row = 0;
  for (i64 c = 0; c < cg; ++c) {
    const T* xc = x + c * D * H * W;
    for (i64 kd = 0; kd < spec.kernel[0]; ++kd) {
      for (i64 kh = 0; kh < spec.kernel[1]; ++kh) {
        for (i64 kw = 0; kw < spec.kernel[2]; ++kw, ++row) {
          T* dst = col + row * n_sp;
          const i64 iw0 = -spec.padding[2] + kw * spec.dilation[2];
          // Clip bounds along the width run depend only on kw.
          const i64 lo = spec.stride[2] == 1
                             ? std::min(ow, std::max<i64>(0, -iw0))
                             : 0;
          const i64 hi = spec.stride[2] == 1
                             ? std::max(lo, std::min<i64>(ow, W - iw0))
                             : 0;
          for (i64 d = 0; d < od; ++d) {
            const i64 id = d * spec.stride[0] - spec.padding[0] + kd * spec.dilation[0];
            if (id < 0 || id >= D) {
              T* z = dst + d * oh * ow;
              for (i64 i = 0; i < oh * ow; ++i) z[i] = T(0);
              continue;
            }
            for (i64 h = 0; h < oh; ++h) {
              const i64 ih = h * spec.stride[1] - spec.padding[1] + kh * spec.dilation[1];
              T* drow = dst + (d * oh + h) * ow;
              if (ih < 0 || ih >= H) {
                for (i64 i = 0; i < ow; ++i) drow[i] = T(0);
                continue;
              }
              const T* srow = xc + (id * H + ih) * W;
              if (spec.stride[2] == 1) {
                for (i64 wo = 0; wo < lo; ++wo) drow[wo] = T(0);
                const T* s = srow + iw0;
                for (i64 wo = lo; wo < hi; ++wo) drow[wo] = s[wo];
                for (i64 wo = hi; wo < ow; ++wo) drow[wo] = T(0);
              } else {
                for (i64 wo = 0; wo < ow; ++wo) {
                  const i64 iw = wo * spec.stride[2] + iw0;
                  drow[wo] = (iw >= 0 && iw < W) ? srow[iw] : T(0);
                }
              }
            }
          }
        }
      }
    }
  }
}

// Scatter-add of a column matrix back into the input gradient.
template <typename T>
void col2im_add(const T* col, i64 D, i64 H, i64 W, const ConvSpec& spec, i64 cg, i64 od,
                i64 oh, i64 ow, T* gx) {
  const i64 n_sp = od * oh * ow;
  i64 row = 0;
  for (i64 c = 0; c < cg; ++c) {
    T* xc = gx + c * D * H * W;
    for (i64 kd = 0; kd < spec.kernel[0]; ++kd) {
      for (i64 kh = 0; kh < spec.kernel[1]; ++kh) {
        for (i64 kw = 0; kw < spec.kernel[2]; ++kw, ++row) {
          const T* src = col + row * n_sp;
          const i64 iw0 = -spec.padding[2] + kw * spec.dilation[2];
          const i64 lo = spec.stride[2] == 1
                             ? std::min(ow, std::max<i64>(0, -iw0))
                             : 0;
          const i64 hi = spec.stride[2] == 1
                             ? std::max(lo, std::min<i64>(ow, W - iw0))
                             : 0;
          for (i64 d = 0; d < od; ++d) {
            const i64 id = d * spec.stride[0] - spec.padding[0] + kd * spec.dilation[0];
            if (id < 0 || id >= D) continue;
            for (i64 h = 0; h < oh; ++h) {
              const i64 ih = h * spec.stride[1] - spec.padding[1] + kh * spec.dilation[1];
              if (ih < 0 || ih >= H) continue;
              const T* srow = src + (d * oh + h) * ow;
              T* drow = xc + (id * H + ih) * W;
              if (spec.stride[2] == 1) {
                T* dr = drow + iw0;
                for (i64 wo = lo; wo < hi; ++wo) dr[wo] += srow[wo];
              } else {
                for (i64 wo = 0; wo < ow; ++wo) {
                  const i64 iw =
                      wo * spec.stride[2] - spec.padding[2] + kw * spec.dilation[2];
                  if (iw >= 0 && iw < W) drow[iw] += srow[wo];
                }
              }
            }
          }
        }
      }
    }
  }
}

// 1x1x1 convolutions with unit stride and no padding are plain channel
// mixes: run the GEMM straight on the input layout, no column matrix.
inline bool is_pointwise(const ConvSpec& spec) {
  for (int a = 0; a < 3; ++a)
    if (spec.kernel[a] != 1 || spec.stride[a] != 1 || spec.padding[a] != 0 ||
        spec.dilation[a] != 1)
      return false;
  return true;
}

}  // namespace

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w,
                         const std::type_identity_t<Tensor<T>>* bias,
                         const ConvSpec& spec) {
  check_conv_args(x, w, bias, spec);
  const i64 B = x.dim(0), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const auto out = spec.output_extents({D, H, W});
  const i64 od = out[0], oh = out[1], ow = out[2], n_sp = od * oh * ow;
  const i64 cg = spec.group_in_channels(), og = spec.group_out_channels();
  const i64 k_col = cg * spec.kernel_volume();

  Tensor<T> y({B, spec.out_channels, od, oh, ow});
  const bool pointwise = is_pointwise(spec);
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(k_col * n_sp));
  for (i64 n = 0; n < B; ++n) {
    for (i64 g = 0; g < spec.groups; ++g) {
      const T* xg = x.data() + ((n * spec.in_channels) + g * cg) * D * H * W;
      const T* wg = w.data() + g * og * k_col;
      T* yg = y.data() + ((n * spec.out_channels) + g * og) * n_sp;
      if (pointwise) {
        kern::gemm_nn(og, n_sp, cg, wg, cg, xg, n_sp, T(0), yg, n_sp);
      } else {
        im2col(xg, D, H, W, spec, cg, od, oh, ow, col.data());
        kern::gemm_nn(og, n_sp, k_col, wg, k_col, col.data(), n_sp, T(0), yg, n_sp);
      }
    }
    if (bias) {
      for (i64 c = 0; c < spec.out_channels; ++c) {
        const T bv = (*bias)[c];
        T* yc = y.data() + ((n * spec.out_channels) + c) * n_sp;
        for (i64 i = 0; i < n_sp; ++i) yc[i] += bv;
      }
    }
  }
  y.check_finite("conv3d_forward");
  return y;
}

namespace {

// Pointer-based core shared by the public API and the tape closure; all
// outputs are accumulated into.
template <typename T>
void conv3d_backward_raw(const T* grad_out, const T* x, const T* w, i64 B, i64 D, i64 H,
                         i64 W, const ConvSpec& spec, T* gx, T* gw, T* gb) {
  const auto out = spec.output_extents({D, H, W});
  const i64 od = out[0], oh = out[1], ow = out[2], n_sp = od * oh * ow;
  const i64 cg = spec.group_in_channels(), og = spec.group_out_channels();
  const i64 k_col = cg * spec.kernel_volume();

  const bool pointwise = is_pointwise(spec);
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(k_col * n_sp));
  std::vector<T> gcol((gx && !pointwise) ? static_cast<std::size_t>(k_col * n_sp) : 0);
  for (i64 n = 0; n < B; ++n) {
    for (i64 g = 0; g < spec.groups; ++g) {
      const T* go_g = grad_out + ((n * spec.out_channels) + g * og) * n_sp;
      const T* xg = x + ((n * spec.in_channels) + g * cg) * D * H * W;
      const T* wg = w + g * og * k_col;
      if (pointwise) {
        if (gw)
          kern::gemm_nt(og, cg, n_sp, go_g, n_sp, xg, n_sp, T(1), gw + g * og * cg, cg);
        if (gx)
          kern::gemm_tn(cg, n_sp, og, wg, cg, go_g, n_sp, T(1),
                        gx + ((n * spec.in_channels) + g * cg) * D * H * W, n_sp);
        continue;
      }
      if (gw) {
        im2col(xg, D, H, W, spec, cg, od, oh, ow, col.data());
        kern::gemm_nt(og, k_col, n_sp, go_g, n_sp, col.data(), n_sp, T(1),
                      gw + g * og * k_col, k_col);
      }
      if (gx) {
        kern::gemm_tn(k_col, n_sp, og, wg, k_col, go_g, n_sp, T(0), gcol.data(), n_sp);
        col2im_add(gcol.data(), D, H, W, spec, cg, od, oh, ow,
                   gx + ((n * spec.in_channels) + g * cg) * D * H * W);
      }
    }
    if (gb) {
      for (i64 c = 0; c < spec.out_channels; ++c)
        gb[c] += kern::vsum(n_sp, grad_out + ((n * spec.out_channels) + c) * n_sp);
    }
  }
}

}  // namespace

template <typename T>
void conv3d_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w,
                     const ConvSpec& spec, Tensor<T>* grad_x, Tensor<T>* grad_w,
                     Tensor<T>* grad_b) {
  check_conv_args<T>(x, w, nullptr, spec);
  const i64 B = x.dim(0), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const auto out = spec.output_extents({D, H, W});
  const Shape expect_go{B, spec.out_channels, out[0], out[1], out[2]};
  if (grad_out.shape() != expect_go)
    throw ShapeError("conv3d_backward: grad_out " + shape_str(grad_out.shape()) +
                     " != " + shape_str(expect_go));
  if (grad_x && grad_x->shape() != x.shape())
    throw ShapeError("conv3d_backward: grad_x shape mismatch");
  if (grad_w && grad_w->shape() != w.shape())
    throw ShapeError("conv3d_backward: grad_w shape mismatch");
  if (grad_b && grad_b->numel() != spec.out_channels)
    throw ShapeError("conv3d_backward: grad_b length mismatch");
  conv3d_backward_raw(grad_out.data(), x.data(), w.data(), B, D, H, W, spec,
                      grad_x ? grad_x->data() : nullptr, grad_w ? grad_w->data() : nullptr,
                      grad_b ? grad_b->data() : nullptr);
}

template <typename T>
Tensor<T> conv3d_naive(const Tensor<T>& x, const Tensor<T>& w,
                       const std::type_identity_t<Tensor<T>>* bias,
                       const ConvSpec& spec) {
  check_conv_args(x, w, bias, spec);
  const i64 B = x.dim(0), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const auto out = spec.output_extents({D, H, W});
  const i64 od = out[0], oh = out[1], ow = out[2];
  const i64 cg = spec.group_in_channels(), og = spec.group_out_channels();

  Tensor<T> y({B, spec.out_channels, od, oh, ow});
  i64 idx = 0;
  for (i64 n = 0; n < B; ++n) {
    for (i64 oc = 0; oc < spec.out_channels; ++oc) {
      const i64 g = oc / og;
      for (i64 d = 0; d < od; ++d) {
        for (i64 h = 0; h < oh; ++h) {
          for (i64 wo = 0; wo < ow; ++wo, ++idx) {
            double acc = bias ? static_cast<double>((*bias)[oc]) : 0.0;
            for (i64 c = 0; c < cg; ++c) {
              const i64 ic = g * cg + c;
              for (i64 kd = 0; kd < spec.kernel[0]; ++kd) {
                const i64 id = d * spec.stride[0] - spec.padding[0] + kd * spec.dilation[0];
                if (id < 0 || id >= D) continue;
                for (i64 kh = 0; kh < spec.kernel[1]; ++kh) {
                  const i64 ih =
                      h * spec.stride[1] - spec.padding[1] + kh * spec.dilation[1];
                  if (ih < 0 || ih >= H) continue;
                  for (i64 kw = 0; kw < spec.kernel[2]; ++kw) {
                    const i64 iw =
                        wo * spec.stride[2] - spec.padding[2] + kw * spec.dilation[2];
                    if (iw < 0 || iw >= W) continue;
                    const double xv =
                        x[((n * spec.in_channels + ic) * D + id) * H * W + ih * W + iw];
                    const double wv =
                        w[((oc * cg + c) * spec.kernel[0] + kd) * spec.kernel[1] *
                              spec.kernel[2] +
                          kh * spec.kernel[2] + kw];
                    acc += xv * wv;
                  }
                }
              }
            }
            y[idx] = static_cast<T>(acc);
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> conv3d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w,
                 const std::type_identity_t<Tensor<T>>* bias, const ConvSpec& spec) {
  Tensor<T> y = conv3d_forward(x, w, bias, spec);
  const bool need =
      tape && (x.requires_grad() || w.requires_grad() || (bias && bias->requires_grad()));
  if (need) {
    y.set_requires_grad(true);
    Tensor<T> tx = x, tw = w, ty = y;
    Tensor<T> tb = bias ? *bias : Tensor<T>();
    ConvSpec sp = spec;
    tape->record([tx, tw, tb, ty, sp]() mutable {
      conv3d_backward_raw(ty.grad(), tx.data(), tw.data(), tx.dim(0), tx.dim(2),
                          tx.dim(3), tx.dim(4), sp,
                          tx.requires_grad() ? tx.grad() : nullptr,
                          tw.requires_grad() ? tw.grad() : nullptr,
                          (tb.defined() && tb.requires_grad()) ? tb.grad() : nullptr);
    });
  }
  return y;
}

#define EKG_INSTANTIATE_CONV(T)                                                           \
  template Tensor<T> conv3d_forward<T>(const Tensor<T>&, const Tensor<T>&,               \
                                       const std::type_identity_t<Tensor<T>>*,           \
                                       const ConvSpec&);                                 \
  template void conv3d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                   const ConvSpec&, Tensor<T>*, Tensor<T>*, Tensor<T>*); \
  template Tensor<T> conv3d_naive<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                     const std::type_identity_t<Tensor<T>>*,             \
                                     const ConvSpec&);                                   \
  template Tensor<T> conv3d<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&,             \
                               const std::type_identity_t<Tensor<T>>*, const ConvSpec&);

EKG_INSTANTIATE_CONV(float)
EKG_INSTANTIATE_CONV(double)
#undef EKG_INSTANTIATE_CONV

}  // namespace ekg
