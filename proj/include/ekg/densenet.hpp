#pragma once

#include <string>
#include <vector>

#include "ekg/expert_conv.hpp"

namespace ekg {

// Stage m uses growth rate 2^(m-1) * k0 (m is 1-based).
i64 growth_rate(int stage_index, i64 k0);

struct ArchConfig {
  std::vector<int> stages{4, 6, 8};  // dense layers per stage
  i64 k0 = 8;                        // base growth rate
  i64 groups = 4;                    // groups of the dynamic 3x3x3 convs
  i64 experts = 4;                   // expert kernels per dynamic conv
  i64 reduction = 16;                // mapping-network bottleneck ratio
  double gate_init = 0.25;           // residual gate start value
  int mapping_blocks = 2;
  bool expert_bias = true;
  int num_classes = 0;
  // Input patch as B x 1 x depth x height x width (spectral axis = depth).
  i64 in_depth = 0, in_height = 0, in_width = 0;
  TempSchedule temperature;

  std::vector<i64> growth_rates() const;
  i64 stem_channels() const { return 2 * k0; }
  void validate() const;
};

// One input feeding a dense block, with the pooling factor that bridges the
// resolution gap between where it was produced and where it is consumed.
struct LinkSource {
  enum class Kind { Main, Stem, Block };
  Kind kind;
  int src_stage;  // Block: producing stage; Main/Stem: -1
  i64 channels;
  i64 pool_factor;  // power of two matching the resolution gap
};

template <typename T>
struct DenseLayer {
  i64 in_channels = 0, bottleneck = 0, growth = 0;
  BatchNorm<T> bn1;
  Tensor<T> conv1_weight;  // 1x1x1, in -> 4k, static
  BatchNorm<T> bn2;
  ExpertConv<T> dynamic;   // 3x3x3, 4k -> k, padding 1, grouped
};

template <typename T>
struct TransitionLayer {
  i64 in_channels = 0, out_channels = 0;
  Tensor<T> conv_weight;  // 1x1x1 halving channels; pool factor 2 follows
};

// The assembled network. Stages of dense layers run at successively halved
// resolution; besides the transitioned main path, every stage also sees the
// stem output and each earlier block's new features, average-pooled down by
// the matching power of two. Channel bookkeeping is validated at build time.
template <typename T>
class EkgNet {
 public:
  EkgNet() = default;

  static EkgNet build(const ArchConfig& cfg, SplitRng& rng);

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool training);

  const ArchConfig& config() const { return cfg_; }
  const std::vector<std::vector<LinkSource>>& link_table() const { return links_; }
  i64 final_channels() const { return final_channels_; }

  void update_temperature(int epoch);
  double current_tau() const;

  // Deterministically ordered parameters and buffers.
  std::vector<ParamEntry<T>> named_state();
  i64 parameter_count();  // trainable scalars

  // Test hook: zero every weight feeding one cross-block link source.
  std::vector<std::vector<DenseLayer<T>>>& stages() { return stage_layers_; }

 private:
  void audit_channels() const;

  ArchConfig cfg_;
  Tensor<T> stem_weight_;
  std::vector<std::vector<DenseLayer<T>>> stage_layers_;
  std::vector<TransitionLayer<T>> transitions_;
  Tensor<T> head_weight_, head_bias_;
  std::vector<std::vector<LinkSource>> links_;
  i64 final_channels_ = 0;
};

// Spec of the model builder: convenience wrapper around EkgNet::build.
template <typename T>
EkgNet<T> build_model(const ArchConfig& cfg, SplitRng& rng) {
  return EkgNet<T>::build(cfg, rng);
}

// Cross-resolution average-pool link (factor a power of two; 1 = identity).
template <typename T>
Tensor<T> cross_block_downsample(Tape<T>* tape, const Tensor<T>& feat, i64 factor);

}  // namespace ekg
