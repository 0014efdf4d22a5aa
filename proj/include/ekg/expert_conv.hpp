#pragma once

#include <utility>

#include "ekg/conv3d.hpp"
#include "ekg/mapping.hpp"

namespace ekg {

// Dynamic expert convolution: K base kernels are mixed per sample with the
// attention weights produced by the attached mapping network, and the whole
// batch runs as a single grouped convolution with groups * batch groups so
// every sample sees its own mixed kernel.
template <typename T>
class ExpertConv {
 public:
  ExpertConv() = default;
  ExpertConv(const ConvSpec& spec, i64 num_experts, bool with_bias, i64 reduction,
             int mapping_blocks, T gate_init, const TempSchedule& schedule,
             SplitRng& rng);

  const ConvSpec& spec() const { return spec_; }
  i64 num_experts() const { return num_experts_; }
  bool has_bias() const { return bias_.defined(); }
  Tensor<T>& weight() { return weight_; }        // [K, C_out, C_in/G, S, S, S]
  Tensor<T>& bias() { return bias_; }            // [K, C_out]
  MappingNetwork<T>& mapping() { return mapping_; }
  const MappingNetwork<T>& mapping() const { return mapping_; }

  // Truncated normal (mean 0, std sqrt(2/fan_in), cut at 2 std) for every
  // expert kernel; biases start at zero. Deterministic given the stream.
  void init_kernels(SplitRng& rng);

  // alpha [B x K] -> merged weight [(B*C_out) x C_in/G x S x S x S] and,
  // when biased, merged bias [B*C_out]; both via one matrix product.
  std::pair<Tensor<T>, Tensor<T>> aggregate_kernels(Tape<T>* tape,
                                                    const Tensor<T>& alpha) const;

  // Full layer: alpha from the mapping network on x itself.
  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool training);

  // Same convolution with externally supplied alpha.
  Tensor<T> forward_with_alpha(Tape<T>* tape, const Tensor<T>& x,
                               const Tensor<T>& alpha) const;

  // Attention weights of the most recent forward() call (diagnostics).
  const Tensor<T>& last_alpha() const { return last_alpha_; }

  void collect(const std::string& prefix, std::vector<ParamEntry<T>>& out);

  // Verification oracle: mixes kernels sample by sample in f64 and runs the
  // naive convolution on each sample alone.
  static Tensor<T> per_sample_oracle(const Tensor<T>& x, const Tensor<T>& alpha,
                                     const Tensor<T>& weight, const Tensor<T>* bias,
                                     const ConvSpec& spec);

 private:
  ConvSpec spec_;
  i64 num_experts_ = 0;
  Tensor<T> weight_, bias_;
  MappingNetwork<T> mapping_;
  Tensor<T> last_alpha_;
};

}  // namespace ekg
