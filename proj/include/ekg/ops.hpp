#pragma once

#include <type_traits>
#include <vector>

#include "ekg/tape.hpp"
#include "ekg/tensor.hpp"

// Differentiable tensor operations. Every op takes the tape as its first
// argument; passing nullptr runs pure inference with no recording. An op
// output requires grad iff any input does, and backward contributions are
// accumulated additively into input gradient buffers.

namespace ekg {

// Per-layer batch-norm state: learnable affine plus running statistics.
template <typename T>
struct BatchNorm {
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;

  BatchNorm() = default;
  explicit BatchNorm(i64 channels)
      : gamma(Tensor<T>::full({channels}, T(1))),
        beta(Tensor<T>::zeros({channels})),
        running_mean(Tensor<T>::zeros({channels})),
        running_var(Tensor<T>::full({channels}, T(1))) {
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
  }

  i64 channels() const { return gamma.numel(); }
};

// y = x * Phi(x) with Phi the standard normal CDF (exact erf form).
template <typename T>
Tensor<T> gelu(Tape<T>* tape, const Tensor<T>& x);

// Channel axis is axis 1; statistics are taken over all other axes.
// Training mode normalizes by batch moments (biased variance, eps 1e-5)
// and folds them into the running estimates with momentum 0.1; eval mode
// normalizes by the running estimates.
template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, BatchNorm<T>& bn, bool training,
                     T momentum = T(0.1), T eps = T(1e-5));

// Softmax(logits / tau) along `axis`, max-subtracted for stability.
template <typename T>
Tensor<T> softmax_with_temperature(Tape<T>* tape, const Tensor<T>& logits, T tau,
                                   int axis);

// B x C x D x H x W -> B x C x 1 x 1 x 1 global mean.
template <typename T>
Tensor<T> adaptive_avg_pool3d_to_unit(Tape<T>* tape, const Tensor<T>& x);

// Window `factor`, stride `factor` mean pooling on D, H and W. Output
// extents are ceil(in/factor); edge windows average their valid elements
// only. factor == 1 returns the input unchanged.
template <typename T>
Tensor<T> avg_pool3d_window(Tape<T>* tape, const Tensor<T>& x, i64 factor);

// c[MxN] = a[MxK] * b[KxN]
template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

// y[BxO] = x[BxF] * w^T + b, with w stored [OxF]. bias may be null.
template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w,
                 const std::type_identity_t<Tensor<T>>* bias);

// Concatenation along axis 1; inputs agree on every other extent.
template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const std::vector<Tensor<T>>& xs);

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

// y = s * x where s is a one-element learnable tensor.
template <typename T>
Tensor<T> scalar_scale(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& s);

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x);

// Mean over the batch of -log softmax(logits)[target], log-sum-exp form.
template <typename T>
Tensor<T> cross_entropy(Tape<T>* tape, const Tensor<T>& logits,
                        const std::vector<int>& targets);

}  // namespace ekg
