#include "ekg/expert_conv.hpp"

#include <cmath>

#include "ekg/error.hpp"

namespace ekg {

template <typename T>
ExpertConv<T>::ExpertConv(const ConvSpec& spec, i64 num_experts, bool with_bias,
                          i64 reduction, int mapping_blocks, T gate_init,
                          const TempSchedule& schedule, SplitRng& rng)
    : spec_(spec), num_experts_(num_experts) {
  spec_.validate();
  if (num_experts < 1) throw ParamError("expert conv: need at least one expert");
  weight_ = Tensor<T>({num_experts_, spec_.out_channels, spec_.group_in_channels(),
                       spec_.kernel[0], spec_.kernel[1], spec_.kernel[2]});
  weight_.set_requires_grad(true);
  if (with_bias) {
    bias_ = Tensor<T>({num_experts_, spec_.out_channels});
    bias_.set_requires_grad(true);
  }
  mapping_ = MappingNetwork<T>(spec_.in_channels, num_experts_, mapping_blocks, reduction,
                               gate_init, schedule, rng);
  init_kernels(rng);
}

template <typename T>
void ExpertConv<T>::init_kernels(SplitRng& rng) {
  const i64 fan_in = spec_.group_in_channels() * spec_.kernel_volume();
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (i64 i = 0; i < weight_.numel(); ++i)
    weight_[i] = static_cast<T>(rng.truncated_normal(0.0, stddev));
  if (bias_.defined())
    for (i64 i = 0; i < bias_.numel(); ++i) bias_[i] = T(0);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> ExpertConv<T>::aggregate_kernels(
    Tape<T>* tape, const Tensor<T>& alpha) const {
  require_rank(alpha, 2, "aggregate_kernels");
  if (alpha.dim(1) != num_experts_)
    throw ShapeError("aggregate_kernels: alpha has " + std::to_string(alpha.dim(1)) +
                     " experts, params have " + std::to_string(num_experts_));
  const i64 B = alpha.dim(0);
  const i64 rest = weight_.numel() / num_experts_;
  Tensor<T> flat = weight_.reshape({num_experts_, rest});
  Tensor<T> agg = matmul(tape, alpha, flat);
  Tensor<T> agg_w = agg.reshape({B * spec_.out_channels, spec_.group_in_channels(),
                                 spec_.kernel[0], spec_.kernel[1], spec_.kernel[2]});
  Tensor<T> agg_b;
  if (bias_.defined()) {
    Tensor<T> b = matmul(tape, alpha, bias_);
    agg_b = b.reshape({B * spec_.out_channels});
  }
  return {agg_w, agg_b};
}

template <typename T>
Tensor<T> ExpertConv<T>::forward(Tape<T>* tape, const Tensor<T>& x, bool training) {
  Tensor<T> alpha = mapping_.attention(tape, x, training);
  last_alpha_ = alpha;
  return forward_with_alpha(tape, x, alpha);
}

template <typename T>
Tensor<T> ExpertConv<T>::forward_with_alpha(Tape<T>* tape, const Tensor<T>& x,
                                            const Tensor<T>& alpha) const {
  require_rank(x, 5, "dynamic_conv_forward");
  const i64 B = x.dim(0);
  if (alpha.dim(0) != B)
    throw ShapeError("dynamic_conv_forward: alpha batch " + std::to_string(alpha.dim(0)) +
                     " != input batch " + std::to_string(B));
  auto [agg_w, agg_b] = aggregate_kernels(tape, alpha);

  // One convolution with G*B groups: sample b's channels land in groups
  // [b*G, (b+1)*G) and meet exactly its own mixed kernel.
  Tensor<T> xm = x.reshape({1, B * spec_.in_channels, x.dim(2), x.dim(3), x.dim(4)});
  ConvSpec merged = spec_;
  merged.in_channels = B * spec_.in_channels;
  merged.out_channels = B * spec_.out_channels;
  merged.groups = spec_.groups * B;
  Tensor<T> ym = conv3d(tape, xm, agg_w, agg_b.defined() ? &agg_b : nullptr, merged);
  return ym.reshape({B, spec_.out_channels, ym.dim(2), ym.dim(3), ym.dim(4)});
}

template <typename T>
Tensor<T> ExpertConv<T>::per_sample_oracle(const Tensor<T>& x, const Tensor<T>& alpha,
                                           const Tensor<T>& weight, const Tensor<T>* bias,
                                           const ConvSpec& spec) {
  require_rank(x, 5, "per_sample_oracle");
  require_rank(alpha, 2, "per_sample_oracle");
  const i64 B = x.dim(0);
  const i64 K = alpha.dim(1);
  if (weight.dim(0) != K) throw ShapeError("per_sample_oracle: expert count mismatch");
  const i64 rest = weight.numel() / K;

  Tensor<T> out;
  for (i64 b = 0; b < B; ++b) {
    // Mix this sample's kernel in double precision.
    std::vector<double> wd(static_cast<std::size_t>(rest), 0.0);
    for (i64 k = 0; k < K; ++k) {
      const double a = static_cast<double>(alpha[b * K + k]);
      const T* wk = weight.data() + k * rest;
      for (i64 i = 0; i < rest; ++i) wd[static_cast<std::size_t>(i)] += a * wk[i];
    }
    Tensor<T> w_dyn({spec.out_channels, spec.group_in_channels(), spec.kernel[0],
                     spec.kernel[1], spec.kernel[2]});
    for (i64 i = 0; i < rest; ++i) w_dyn[i] = static_cast<T>(wd[static_cast<std::size_t>(i)]);

    Tensor<T> b_dyn;
    if (bias) {
      b_dyn = Tensor<T>({spec.out_channels});
      for (i64 c = 0; c < spec.out_channels; ++c) {
        double acc = 0.0;
        for (i64 k = 0; k < K; ++k)
          acc += static_cast<double>(alpha[b * K + k]) *
                 static_cast<double>((*bias)[k * spec.out_channels + c]);
        b_dyn[c] = static_cast<T>(acc);
      }
    }

    const i64 sample_numel = x.numel() / B;
    Tensor<T> xb({1, spec.in_channels, x.dim(2), x.dim(3), x.dim(4)});
    std::copy_n(x.data() + b * sample_numel, sample_numel, xb.data());
    Tensor<T> yb = conv3d_naive(xb, w_dyn, b_dyn.defined() ? &b_dyn : nullptr, spec);

    if (!out.defined())
      out = Tensor<T>({B, spec.out_channels, yb.dim(2), yb.dim(3), yb.dim(4)});
    std::copy_n(yb.data(), yb.numel(), out.data() + b * yb.numel());
  }
  return out;
}

template <typename T>
void ExpertConv<T>::collect(const std::string& prefix, std::vector<ParamEntry<T>>& out) {
  out.push_back({prefix + "experts.weight", weight_, true});
  if (bias_.defined()) out.push_back({prefix + "experts.bias", bias_, true});
  mapping_.collect(prefix + "mapping.", out);
}

template class ExpertConv<float>;
template class ExpertConv<double>;

}  // namespace ekg
