#pragma once

#include <array>
#include <type_traits>

#include "ekg/tape.hpp"
#include "ekg/tensor.hpp"

namespace ekg {

// Grouped 3-D cross-correlation with zero padding. Weight layout is
// [C_out, C_in/G, S_d, S_h, S_w]; inputs are [B, C_in, D, H, W].
struct ConvSpec {
  i64 in_channels = 0;
  i64 out_channels = 0;
  std::array<i64, 3> kernel{1, 1, 1};
  std::array<i64, 3> stride{1, 1, 1};
  std::array<i64, 3> padding{0, 0, 0};
  std::array<i64, 3> dilation{1, 1, 1};
  i64 groups = 1;

  void validate() const;
  // floor((in + 2*pad - dilation*(S-1) - 1) / stride) + 1, must be >= 1.
  std::array<i64, 3> output_extents(const std::array<i64, 3>& in) const;
  i64 group_in_channels() const { return in_channels / groups; }
  i64 group_out_channels() const { return out_channels / groups; }
  i64 kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
};

// Fast path: im2col + GEMM per (sample, group). Verified against
// conv3d_naive to 1e-5 (f32) / 1e-10 (f64) max abs difference.
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w,
                         const std::type_identity_t<Tensor<T>>* bias,
                         const ConvSpec& spec);

// Accumulates into whichever of grad_x / grad_w / grad_b is non-null.
template <typename T>
void conv3d_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w,
                     const ConvSpec& spec, Tensor<T>* grad_x, Tensor<T>* grad_w,
                     Tensor<T>* grad_b);

// Ground-truth oracle: direct seven-loop evaluation with f64 accumulation
// regardless of T. Slow on purpose; used by verification suites only.
template <typename T>
Tensor<T> conv3d_naive(const Tensor<T>& x, const Tensor<T>& w,
                       const std::type_identity_t<Tensor<T>>* bias,
                       const ConvSpec& spec);

// Differentiable wrapper over forward/backward.
template <typename T>
Tensor<T> conv3d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w,
                 const std::type_identity_t<Tensor<T>>* bias, const ConvSpec& spec);

}  // namespace ekg
