#include "ekg/densenet.hpp"

#include <cmath>

#include "ekg/error.hpp"

namespace ekg {

i64 growth_rate(int stage_index, i64 k0) {
  if (stage_index < 1) throw ParamError("growth_rate: stage index is 1-based");
  return (i64{1} << (stage_index - 1)) * k0;
}

std::vector<i64> ArchConfig::growth_rates() const {
  std::vector<i64> g;
  for (int m = 1; m <= static_cast<int>(stages.size()); ++m)
    g.push_back(growth_rate(m, k0));
  return g;
}

void ArchConfig::validate() const {
  if (stages.empty()) throw ConfigError("arch: at least one stage required");
  for (int s : stages)
    if (s < 1) throw ConfigError("arch: every stage needs at least one dense layer");
  if (k0 < 1) throw ConfigError("arch: k0 must be >= 1");
  if (groups < 1 || experts < 1 || reduction < 1)
    throw ConfigError("arch: groups, experts and reduction must be >= 1");
  if (mapping_blocks < 0) throw ConfigError("arch: mapping_blocks must be >= 0");
  if (num_classes < 2) throw ConfigError("arch: num_classes must be >= 2");
  if (in_depth < 1 || in_height < 1 || in_width < 1)
    throw ConfigError("arch: input extents must be positive");
  for (std::size_t m = 0; m < stages.size(); ++m) {
    const i64 k = growth_rate(static_cast<int>(m) + 1, k0);
    if (k % groups != 0)
      throw ConfigError("arch: stage " + std::to_string(m) + " growth " +
                        std::to_string(k) + " not divisible by groups " +
                        std::to_string(groups));
  }
  temperature.validate();
}

template <typename T>
Tensor<T> cross_block_downsample(Tape<T>* tape, const Tensor<T>& feat, i64 factor) {
  if (factor < 1) throw ParamError("cross_block_downsample: factor must be >= 1");
  if ((factor & (factor - 1)) != 0)
    throw ParamError("cross_block_downsample: factor must be a power of two");
  return avg_pool3d_window(tape, feat, factor);
}

namespace {

template <typename T>
Tensor<T> init_conv_weight(Shape shape, i64 fan_in, SplitRng& rng) {
  Tensor<T> w(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (i64 i = 0; i < w.numel(); ++i)
    w[i] = static_cast<T>(rng.truncated_normal(0.0, stddev));
  w.set_requires_grad(true);
  return w;
}

}  // namespace

template <typename T>
EkgNet<T> EkgNet<T>::build(const ArchConfig& cfg, SplitRng& rng) {
  cfg.validate();
  EkgNet<T> net;
  net.cfg_ = cfg;
  const int n_stages = static_cast<int>(cfg.stages.size());

  SplitRng stem_rng = rng.derive("stem");
  net.stem_weight_ =
      init_conv_weight<T>({cfg.stem_channels(), 1, 3, 3, 3}, 1 * 27, stem_rng);

  // Channel bookkeeping. block_channels[j] = new features produced by block j.
  std::vector<i64> block_channels;
  i64 main_channels = cfg.stem_channels();

  for (int m = 0; m < n_stages; ++m) {
    const i64 k = growth_rate(m + 1, cfg.k0);
    std::vector<LinkSource> sources;
    sources.push_back({LinkSource::Kind::Main, -1, main_channels, 1});
    if (m > 0) {
      sources.push_back({LinkSource::Kind::Stem, -1, cfg.stem_channels(), i64{1} << m});
      for (int j = 0; j < m; ++j)
        sources.push_back(
            {LinkSource::Kind::Block, j, block_channels[static_cast<std::size_t>(j)],
             i64{1} << (m - j)});
    }
    i64 ctx_channels = 0;
    for (const auto& s : sources) ctx_channels += s.channels;
    net.links_.push_back(sources);

    std::vector<DenseLayer<T>> layers;
    for (int l = 0; l < cfg.stages[static_cast<std::size_t>(m)]; ++l) {
      SplitRng lrng =
          rng.derive("stage" + std::to_string(m) + ".layer" + std::to_string(l));
      DenseLayer<T> layer;
      layer.in_channels = ctx_channels + l * k;
      layer.bottleneck = 4 * k;
      layer.growth = k;
      layer.bn1 = BatchNorm<T>(layer.in_channels);
      layer.conv1_weight = init_conv_weight<T>(
          {layer.bottleneck, layer.in_channels, 1, 1, 1}, layer.in_channels, lrng);
      layer.bn2 = BatchNorm<T>(layer.bottleneck);
      ConvSpec dyn_spec;
      dyn_spec.in_channels = layer.bottleneck;
      dyn_spec.out_channels = k;
      dyn_spec.kernel = {3, 3, 3};
      dyn_spec.padding = {1, 1, 1};
      dyn_spec.groups = cfg.groups;
      layer.dynamic =
          ExpertConv<T>(dyn_spec, cfg.experts, cfg.expert_bias, cfg.reduction,
                        cfg.mapping_blocks, static_cast<T>(cfg.gate_init),
                        cfg.temperature, lrng);
      layers.push_back(std::move(layer));
    }
    net.stage_layers_.push_back(std::move(layers));

    const i64 stage_out = ctx_channels + cfg.stages[static_cast<std::size_t>(m)] * k;
    block_channels.push_back(cfg.stages[static_cast<std::size_t>(m)] * k);
    if (m + 1 < n_stages) {
      SplitRng trng = rng.derive("transition" + std::to_string(m));
      TransitionLayer<T> tr;
      tr.in_channels = stage_out;
      tr.out_channels = stage_out / 2;
      tr.conv_weight =
          init_conv_weight<T>({tr.out_channels, tr.in_channels, 1, 1, 1},
                              tr.in_channels, trng);
      net.transitions_.push_back(std::move(tr));
      main_channels = tr.out_channels;
    } else {
      net.final_channels_ = stage_out;
    }
  }

  SplitRng hrng = rng.derive("head");
  net.head_weight_ = init_conv_weight<T>({cfg.num_classes, net.final_channels_},
                                         net.final_channels_, hrng);
  net.head_bias_ = Tensor<T>({cfg.num_classes});
  net.head_bias_.set_requires_grad(true);
  net.audit_channels();
  return net;
}

template <typename T>
void EkgNet<T>::audit_channels() const {
  // Recompute every layer's declared input from the link table and fail the
  // build on any mismatch.
  for (std::size_t m = 0; m < stage_layers_.size(); ++m) {
    i64 ctx = 0;
    for (const auto& s : links_[m]) {
      if ((s.pool_factor & (s.pool_factor - 1)) != 0 || s.pool_factor < 1)
        throw ConfigError("link table: pooling factor must be a power of two");
      ctx += s.channels;
    }
    for (std::size_t l = 0; l < stage_layers_[m].size(); ++l) {
      const auto& layer = stage_layers_[m][l];
      const i64 expect = ctx + static_cast<i64>(l) * layer.growth;
      if (layer.in_channels != expect)
        throw ConfigError("channel audit failed at stage " + std::to_string(m) +
                          " layer " + std::to_string(l) + ": declared " +
                          std::to_string(layer.in_channels) + ", link table gives " +
                          std::to_string(expect));
      if (layer.bn1.channels() != layer.in_channels ||
          layer.conv1_weight.dim(1) != layer.in_channels)
        throw ConfigError("channel audit: parameter extents inconsistent at stage " +
                          std::to_string(m) + " layer " + std::to_string(l));
    }
  }
}

template <typename T>
Tensor<T> EkgNet<T>::forward(Tape<T>* tape, const Tensor<T>& x, bool training) {
  require_rank(x, 5, "model_forward");
  if (x.dim(1) != 1 || x.dim(2) != cfg_.in_depth || x.dim(3) != cfg_.in_height ||
      x.dim(4) != cfg_.in_width)
    throw ShapeError("model_forward: input " + shape_str(x.shape()) +
                     " does not match configured patch geometry [Bx1x" +
                     std::to_string(cfg_.in_depth) + "x" + std::to_string(cfg_.in_height) +
                     "x" + std::to_string(cfg_.in_width) + "]");

  ConvSpec stem_spec;
  stem_spec.in_channels = 1;
  stem_spec.out_channels = cfg_.stem_channels();
  stem_spec.kernel = {3, 3, 3};
  stem_spec.padding = {1, 1, 1};
  Tensor<T> stem_out = conv3d(tape, x, stem_weight_, nullptr, stem_spec);

  std::vector<Tensor<T>> block_outputs;  // concatenated new features per block
  Tensor<T> main = stem_out;
  Tensor<T> logits;

  for (std::size_t m = 0; m < stage_layers_.size(); ++m) {
    std::vector<Tensor<T>> ctx;
    for (const auto& s : links_[m]) {
      switch (s.kind) {
        case LinkSource::Kind::Main:
          ctx.push_back(main);
          break;
        case LinkSource::Kind::Stem:
          ctx.push_back(cross_block_downsample(tape, stem_out, s.pool_factor));
          break;
        case LinkSource::Kind::Block:
          ctx.push_back(cross_block_downsample(
              tape, block_outputs[static_cast<std::size_t>(s.src_stage)], s.pool_factor));
          break;
      }
    }

    std::vector<Tensor<T>> produced;
    for (auto& layer : stage_layers_[m]) {
      std::vector<Tensor<T>> inputs = ctx;
      inputs.insert(inputs.end(), produced.begin(), produced.end());
      Tensor<T> cat = concat_channels(tape, inputs);
      Tensor<T> h = batch_norm(tape, cat, layer.bn1, training);
      h = gelu(tape, h);
      ConvSpec bott;
      bott.in_channels = layer.in_channels;
      bott.out_channels = layer.bottleneck;
      h = conv3d(tape, h, layer.conv1_weight, nullptr, bott);
      h = batch_norm(tape, h, layer.bn2, training);
      h = gelu(tape, h);
      produced.push_back(layer.dynamic.forward(tape, h, training));
    }

    std::vector<Tensor<T>> all = ctx;
    all.insert(all.end(), produced.begin(), produced.end());
    Tensor<T> stage_out = concat_channels(tape, all);
    block_outputs.push_back(concat_channels(tape, produced));

    if (m + 1 < stage_layers_.size()) {
      auto& tr = transitions_[m];
      ConvSpec tspec;
      tspec.in_channels = tr.in_channels;
      tspec.out_channels = tr.out_channels;
      Tensor<T> t = conv3d(tape, stage_out, tr.conv_weight, nullptr, tspec);
      main = avg_pool3d_window(tape, t, 2);
    } else {
      Tensor<T> pooled = adaptive_avg_pool3d_to_unit(tape, stage_out);
      Tensor<T> flat = pooled.reshape({pooled.dim(0), pooled.dim(1)});
      logits = linear(tape, flat, head_weight_, &head_bias_);
    }
  }
  return logits;
}

template <typename T>
void EkgNet<T>::update_temperature(int epoch) {
  for (auto& stage : stage_layers_)
    for (auto& layer : stage) layer.dynamic.mapping().update_temperature(epoch);
}

template <typename T>
double EkgNet<T>::current_tau() const {
  return static_cast<double>(stage_layers_.front().front().dynamic.mapping().tau());
}

template <typename T>
std::vector<ParamEntry<T>> EkgNet<T>::named_state() {
  std::vector<ParamEntry<T>> out;
  out.push_back({"stem.weight", stem_weight_, true});
  for (std::size_t m = 0; m < stage_layers_.size(); ++m) {
    for (std::size_t l = 0; l < stage_layers_[m].size(); ++l) {
      auto& layer = stage_layers_[m][l];
      const std::string p =
          "stage" + std::to_string(m) + ".layer" + std::to_string(l) + ".";
      out.push_back({p + "bn1.gamma", layer.bn1.gamma, true});
      out.push_back({p + "bn1.beta", layer.bn1.beta, true});
      out.push_back({p + "bn1.running_mean", layer.bn1.running_mean, false});
      out.push_back({p + "bn1.running_var", layer.bn1.running_var, false});
      out.push_back({p + "conv1.weight", layer.conv1_weight, true});
      out.push_back({p + "bn2.gamma", layer.bn2.gamma, true});
      out.push_back({p + "bn2.beta", layer.bn2.beta, true});
      out.push_back({p + "bn2.running_mean", layer.bn2.running_mean, false});
      out.push_back({p + "bn2.running_var", layer.bn2.running_var, false});
      layer.dynamic.collect(p + "dynamic.", out);
    }
  }
  for (std::size_t m = 0; m < transitions_.size(); ++m)
    out.push_back(
        {"transition" + std::to_string(m) + ".weight", transitions_[m].conv_weight, true});
  out.push_back({"head.weight", head_weight_, true});
  out.push_back({"head.bias", head_bias_, true});
  return out;
}

template <typename T>
i64 EkgNet<T>::parameter_count() {
  i64 n = 0;
  for (const auto& e : named_state())
    if (e.trainable) n += e.tensor.numel();
  return n;
}

template class EkgNet<float>;
template class EkgNet<double>;
template Tensor<float> cross_block_downsample<float>(Tape<float>*, const Tensor<float>&,
                                                     i64);
template Tensor<double> cross_block_downsample<double>(Tape<double>*,
                                                       const Tensor<double>&, i64);

}  // namespace ekg
