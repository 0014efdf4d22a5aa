#pragma once

#include <string>
#include <vector>

#include "ekg/ops.hpp"
#include "ekg/rng.hpp"
#include "ekg/tape.hpp"
#include "ekg/tensor.hpp"

namespace ekg {

// Linear temperature decay from tau_start to tau_end over anneal_epochs,
// clamped at tau_end afterwards.
struct TempSchedule {
  double tau_start = 30.0;
  double tau_end = 1.0;
  int anneal_epochs = 10;

  void validate() const;
  double tau_at(int epoch) const;
};

// Named parameter/buffer handle used for optimizers and checkpoints.
// Tensor handles share storage with the owning module.
template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

// The context-aware mapping network: global average pooling compresses the
// input to one value per channel, a stack of gated residual blocks
// (BN -> GELU -> 1x1x1 conv, realized as a linear map on the pooled
// vector) refines it, and a final BN + projection emits one logit per
// expert kernel. Softmax with the scheduled temperature turns logits into
// attention weights.
template <typename T>
class MappingNetwork {
 public:
  MappingNetwork() = default;
  MappingNetwork(i64 in_channels, i64 num_experts, int num_blocks, i64 reduction,
                 T gate_init, const TempSchedule& schedule, SplitRng& rng);

  i64 in_channels() const { return in_channels_; }
  i64 num_experts() const { return num_experts_; }
  i64 hidden_channels() const { return hidden_; }
  int num_blocks() const { return static_cast<int>(blocks_.size()); }

  // Pooled context g as B x C x 1 x 1 x 1.
  static Tensor<T> extract_context(Tape<T>* tape, const Tensor<T>& x);

  // g (B x C, squeezed context) -> expert logits (B x K).
  Tensor<T> forward_logits(Tape<T>* tape, const Tensor<T>& g, bool training);

  // Full path: x (5-d) -> attention weights alpha (B x K, rows sum to 1).
  Tensor<T> attention(Tape<T>* tape, const Tensor<T>& x, bool training);

  void update_temperature(int epoch);
  T tau() const { return tau_[0]; }
  void set_tau(T tau);
  const TempSchedule& schedule() const { return schedule_; }

  void collect(const std::string& prefix, std::vector<ParamEntry<T>>& out);

 private:
  struct Block {
    BatchNorm<T> bn;
    Tensor<T> weight, bias;  // linear form of the 1x1x1 conv
    Tensor<T> gate;          // learnable residual gate, one element
    bool has_projection = false;
    Tensor<T> proj_weight, proj_bias;  // skip-path channel change (first block)
  };

  i64 in_channels_ = 0, num_experts_ = 0, hidden_ = 0;
  std::vector<Block> blocks_;
  BatchNorm<T> final_bn_;
  Tensor<T> final_weight_, final_bias_;
  Tensor<T> tau_;  // one-element buffer so it serializes like any tensor
  TempSchedule schedule_;
};

// Softmax over experts at temperature tau; rows of the result sum to 1.
template <typename T>
Tensor<T> attention_weights(Tape<T>* tape, const Tensor<T>& attn, T tau);

}  // namespace ekg
