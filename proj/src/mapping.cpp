#include "ekg/mapping.hpp"

#include <algorithm>
#include <cmath>

#include "ekg/error.hpp"

namespace ekg {

void TempSchedule::validate() const {
  if (!(tau_end > 0.0)) throw ParamError("temperature schedule: tau_end must be > 0");
  if (!(tau_start >= tau_end))
    throw ParamError("temperature schedule: tau_start must be >= tau_end");
  if (anneal_epochs < 1) throw ParamError("temperature schedule: anneal_epochs must be >= 1");
}

double TempSchedule::tau_at(int epoch) const {
  if (epoch < 0) throw ParamError("temperature schedule: negative epoch");
  const double frac = std::max(0.0, 1.0 - static_cast<double>(epoch) / anneal_epochs);
  return tau_end + (tau_start - tau_end) * frac;
}

namespace {

// Truncated-normal fill used for every learnable weight matrix here:
// std = sqrt(2 / fan_in), resampled beyond two standard deviations.
template <typename T>
Tensor<T> init_weight(Shape shape, i64 fan_in, SplitRng& rng) {
  Tensor<T> w(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (i64 i = 0; i < w.numel(); ++i)
    w[i] = static_cast<T>(rng.truncated_normal(0.0, stddev));
  w.set_requires_grad(true);
  return w;
}

template <typename T>
Tensor<T> init_zero_param(Shape shape) {
  Tensor<T> t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

template <typename T>
MappingNetwork<T>::MappingNetwork(i64 in_channels, i64 num_experts, int num_blocks,
                                  i64 reduction, T gate_init,
                                  const TempSchedule& schedule, SplitRng& rng)
    : in_channels_(in_channels), num_experts_(num_experts), schedule_(schedule) {
  if (in_channels < 1) throw ParamError("mapping network: in_channels must be >= 1");
  if (num_experts < 1) throw ParamError("mapping network: need at least one expert");
  if (num_blocks < 0) throw ParamError("mapping network: negative block count");
  if (reduction < 1) throw ParamError("mapping network: reduction must be >= 1");
  schedule.validate();

  hidden_ = std::max<i64>(in_channels / reduction, num_experts);

  i64 width = in_channels;
  for (int i = 0; i < num_blocks; ++i) {
    Block b;
    b.bn = BatchNorm<T>(width);
    b.weight = init_weight<T>({hidden_, width}, width, rng);
    b.bias = init_zero_param<T>({hidden_});
    b.gate = Tensor<T>::full({1}, gate_init);
    b.gate.set_requires_grad(true);
    if (width != hidden_) {
      b.has_projection = true;
      b.proj_weight = init_weight<T>({hidden_, width}, width, rng);
      b.proj_bias = init_zero_param<T>({hidden_});
    }
    blocks_.push_back(std::move(b));
    width = hidden_;
  }
  final_bn_ = BatchNorm<T>(width);
  final_weight_ = init_weight<T>({num_experts_, width}, width, rng);
  final_bias_ = init_zero_param<T>({num_experts_});
  tau_ = Tensor<T>::full({1}, static_cast<T>(schedule_.tau_at(0)));
}

template <typename T>
Tensor<T> MappingNetwork<T>::extract_context(Tape<T>* tape, const Tensor<T>& x) {
  return adaptive_avg_pool3d_to_unit(tape, x);
}

template <typename T>
Tensor<T> MappingNetwork<T>::forward_logits(Tape<T>* tape, const Tensor<T>& g,
                                            bool training) {
  if (in_channels_ == 0) throw StateError("mapping network: not initialized");
  require_rank(g, 2, "mapping_forward");
  if (g.dim(1) != in_channels_)
    throw ShapeError("mapping_forward: context channels " + std::to_string(g.dim(1)) +
                     " != " + std::to_string(in_channels_));
  Tensor<T> h = g;
  for (auto& b : blocks_) {
    Tensor<T> u = batch_norm(tape, h, b.bn, training);
    u = gelu(tape, u);
    u = linear(tape, u, b.weight, &b.bias);
    Tensor<T> skip =
        b.has_projection ? linear(tape, h, b.proj_weight, &b.proj_bias) : h;
    h = add(tape, scalar_scale(tape, u, b.gate), skip);
  }
  Tensor<T> f = batch_norm(tape, h, final_bn_, training);
  return linear(tape, f, final_weight_, &final_bias_);
}

template <typename T>
Tensor<T> MappingNetwork<T>::attention(Tape<T>* tape, const Tensor<T>& x, bool training) {
  Tensor<T> g = extract_context(tape, x);
  Tensor<T> logits = forward_logits(tape, g.reshape({g.dim(0), g.dim(1)}), training);
  return attention_weights(tape, logits, tau());
}

template <typename T>
void MappingNetwork<T>::update_temperature(int epoch) {
  tau_[0] = static_cast<T>(schedule_.tau_at(epoch));
}

template <typename T>
void MappingNetwork<T>::set_tau(T tau) {
  if (!(tau > T(0))) throw ParamError("mapping network: tau must be positive");
  tau_[0] = tau;
}

template <typename T>
void MappingNetwork<T>::collect(const std::string& prefix,
                                std::vector<ParamEntry<T>>& out) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    const std::string p = prefix + "block" + std::to_string(i) + ".";
    out.push_back({p + "bn.gamma", b.bn.gamma, true});
    out.push_back({p + "bn.beta", b.bn.beta, true});
    out.push_back({p + "bn.running_mean", b.bn.running_mean, false});
    out.push_back({p + "bn.running_var", b.bn.running_var, false});
    out.push_back({p + "conv.weight", b.weight, true});
    out.push_back({p + "conv.bias", b.bias, true});
    out.push_back({p + "gate", b.gate, true});
    if (b.has_projection) {
      out.push_back({p + "skip.weight", b.proj_weight, true});
      out.push_back({p + "skip.bias", b.proj_bias, true});
    }
  }
  out.push_back({prefix + "final_bn.gamma", final_bn_.gamma, true});
  out.push_back({prefix + "final_bn.beta", final_bn_.beta, true});
  out.push_back({prefix + "final_bn.running_mean", final_bn_.running_mean, false});
  out.push_back({prefix + "final_bn.running_var", final_bn_.running_var, false});
  out.push_back({prefix + "proj.weight", final_weight_, true});
  out.push_back({prefix + "proj.bias", final_bias_, true});
  out.push_back({prefix + "tau", tau_, false});
}

template <typename T>
Tensor<T> attention_weights(Tape<T>* tape, const Tensor<T>& attn, T tau) {
  require_rank(attn, 2, "attention_weights");
  return softmax_with_temperature(tape, attn, tau, 1);
}

template class MappingNetwork<float>;
template class MappingNetwork<double>;
template Tensor<float> attention_weights<float>(Tape<float>*, const Tensor<float>&, float);
template Tensor<double> attention_weights<double>(Tape<double>*, const Tensor<double>&,
                                                  double);

}  // namespace ekg
