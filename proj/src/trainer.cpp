#include "ekg/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "ekg/error.hpp"
#include "ekg/ops.hpp"
#include "ekg/rng.hpp"

namespace ekg {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(lr > 0.0) && lr != 0.0) throw ConfigError("train: learning rate must be >= 0");
  if (lr < 0.0) throw ConfigError("train: learning rate must be >= 0");
  if (patience < 0) throw ConfigError("train: patience must be >= 0");
}

template <typename T>
void adam_update(i64 n, T* param, const T* grad, T* m, T* v, i64 step, T lr, T beta1,
                 T beta2, T eps) {
  const T bc1 = T(1) - std::pow(beta1, static_cast<T>(step));
  const T bc2 = T(1) - std::pow(beta2, static_cast<T>(step));
  for (i64 i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (T(1) - beta1) * grad[i];
    v[i] = beta2 * v[i] + (T(1) - beta2) * grad[i] * grad[i];
    const T mhat = m[i] / bc1;
    const T vhat = v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, const TrainConfig& cfg)
    : params_(std::move(params)),
      lr_(static_cast<T>(cfg.lr)),
      beta1_(static_cast<T>(cfg.beta1)),
      beta2_(static_cast<T>(cfg.beta2)),
      eps_(static_cast<T>(cfg.eps)) {
  for (auto& p : params_) {
    p.ensure_grad();
    m_.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
    v_.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    adam_update(p.numel(), p.data(), p.grad(), m_[i].data(), v_[i].data(), t_, lr_,
                beta1_, beta2_, eps_);
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes) {
  if (classes < 1) throw ParamError("confusion matrix: need at least one class");
  counts_.assign(static_cast<std::size_t>(classes) * classes, 0);
}

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth < 0 || truth >= classes_ || predicted < 0 || predicted >= classes_)
    throw IndexError("confusion matrix: class index out of range");
  ++counts_[static_cast<std::size_t>(truth * classes_ + predicted)];
}

i64 ConfusionMatrix::at(int truth, int predicted) const {
  return counts_[static_cast<std::size_t>(truth * classes_ + predicted)];
}

i64 ConfusionMatrix::total() const {
  i64 t = 0;
  for (i64 c : counts_) t += c;
  return t;
}

i64 ConfusionMatrix::row_sum(int truth) const {
  i64 s = 0;
  for (int p = 0; p < classes_; ++p) s += at(truth, p);
  return s;
}

i64 ConfusionMatrix::col_sum(int predicted) const {
  i64 s = 0;
  for (int t = 0; t < classes_; ++t) s += at(t, predicted);
  return s;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ShapeError("confusion matrix: size mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

MetricsReport metrics(const ConfusionMatrix& cm) {
  const i64 total = cm.total();
  if (total == 0) throw StateError("metrics: empty confusion matrix");
  MetricsReport r;
  i64 diag = 0;
  double pe = 0.0;
  double recall_sum = 0.0;
  int present = 0;
  for (int c = 0; c < cm.classes(); ++c) {
    diag += cm.at(c, c);
    const i64 row = cm.row_sum(c);
    const i64 col = cm.col_sum(c);
    pe += static_cast<double>(row) * static_cast<double>(col);
    if (row > 0) {
      const double rec = static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
      r.per_class_recall.push_back(rec);
      recall_sum += rec;
      ++present;
    } else {
      r.per_class_recall.push_back(0.0);
      r.absent_classes.push_back(c);
    }
  }
  pe /= static_cast<double>(total) * static_cast<double>(total);
  r.oa = static_cast<double>(diag) / static_cast<double>(total);
  r.aa = present > 0 ? recall_sum / present : 0.0;
  r.kappa = pe < 1.0 ? (r.oa - pe) / (1.0 - pe) : 1.0;
  return r;
}

template <typename T>
Tensor<T> make_batch(const PatchDataset<T>& ds, const std::vector<i64>& idx,
                     std::vector<int>* targets) {
  if (idx.empty()) throw ParamError("make_batch: empty index list");
  const i64 B = static_cast<i64>(idx.size());
  Tensor<T> x({B, 1, ds.bands, ds.block, ds.block});
  if (targets) targets->clear();
  for (i64 i = 0; i < B; ++i) {
    std::copy_n(ds.patch(idx[static_cast<std::size_t>(i)]), ds.patch_numel(),
                x.data() + i * ds.patch_numel());
    if (targets) targets->push_back(ds.labels[static_cast<std::size_t>(
        idx[static_cast<std::size_t>(i)])]);
  }
  return x;
}

namespace {

template <typename T>
int argmax_row(const Tensor<T>& logits, i64 row) {
  const i64 C = logits.dim(1);
  int best = 0;
  for (i64 c = 1; c < C; ++c)
    if (logits[row * C + c] > logits[row * C + best]) best = static_cast<int>(c);
  return best;
}

}  // namespace

template <typename T>
ConfusionMatrix evaluate(EkgNet<T>& model, const PatchDataset<T>& ds, Split split,
                         double* mean_loss, int batch_size) {
  const std::vector<i64> idx = ds.indices_of(split);
  if (idx.empty()) throw StateError("evaluate: split is empty");
  ConfusionMatrix cm(model.config().num_classes);
  double loss_sum = 0.0;
  for (std::size_t at = 0; at < idx.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t hi = std::min(idx.size(), at + static_cast<std::size_t>(batch_size));
    std::vector<i64> chunk(idx.begin() + static_cast<std::ptrdiff_t>(at),
                           idx.begin() + static_cast<std::ptrdiff_t>(hi));
    std::vector<int> targets;
    Tensor<T> x = make_batch(ds, chunk, &targets);
    Tensor<T> logits = model.forward(nullptr, x, /*training=*/false);
    if (mean_loss) {
      Tensor<T> l = cross_entropy<T>(nullptr, logits, targets);
      loss_sum += static_cast<double>(l[0]) * static_cast<double>(chunk.size());
    }
    for (std::size_t i = 0; i < chunk.size(); ++i)
      cm.add(targets[i], argmax_row(logits, static_cast<i64>(i)));
  }
  if (mean_loss) *mean_loss = loss_sum / static_cast<double>(idx.size());
  return cm;
}

template <typename T>
TrainResult train(EkgNet<T>& model, const PatchDataset<T>& ds, const TrainConfig& cfg) {
  cfg.validate();
  const std::vector<i64> train_idx = ds.indices_of(Split::Train);
  if (train_idx.empty()) throw ConfigError("train: training split is empty");
  const bool has_val = !ds.indices_of(Split::Val).empty();

  auto state = model.named_state();
  std::vector<Tensor<T>> params;
  for (auto& e : state)
    if (e.trainable) params.push_back(e.tensor);
  Adam<T> opt(params, cfg);
  SplitRng shuffle_rng = SplitRng(cfg.seed).derive("shuffle");

  TrainResult result;
  std::vector<std::vector<T>> best_state;
  auto snapshot = [&]() {
    best_state.clear();
    for (auto& e : state) best_state.push_back(e.tensor.vec());
  };
  auto restore = [&]() {
    for (std::size_t i = 0; i < state.size(); ++i) state[i].tensor.vec() = best_state[i];
  };

  std::vector<i64> order = train_idx;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    model.update_temperature(epoch);
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    i64 correct = 0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi =
          std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      std::vector<i64> chunk(order.begin() + static_cast<std::ptrdiff_t>(at),
                             order.begin() + static_cast<std::ptrdiff_t>(hi));
      std::vector<int> targets;
      Tensor<T> x = make_batch(ds, chunk, &targets);
      Tape<T> tape;
      opt.zero_grad();
      Tensor<T> logits = model.forward(&tape, x, /*training=*/true);
      Tensor<T> loss = cross_entropy(&tape, logits, targets);
      tape.backward(loss);
      opt.step();
      ++result.steps;
      loss_sum += static_cast<double>(loss[0]) * static_cast<double>(chunk.size());
      for (std::size_t i = 0; i < chunk.size(); ++i)
        if (argmax_row(logits, static_cast<i64>(i)) == targets[i]) ++correct;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.tau = model.current_tau();
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.train_oa = static_cast<double>(correct) / static_cast<double>(order.size());
    if (has_val) {
      double val_loss = 0.0;
      ConfusionMatrix cm = evaluate(model, ds, Split::Val, &val_loss, cfg.batch_size);
      stats.val_loss = val_loss;
      stats.val_oa = metrics(cm).oa;
    } else {
      stats.val_loss = stats.train_loss;
      stats.val_oa = stats.train_oa;
    }
    result.log.push_back(stats);

    if (result.best_epoch < 0 || stats.val_oa > result.best_val_oa) {
      result.best_epoch = epoch;
      result.best_val_oa = stats.val_oa;
      snapshot();
    }
    if (cfg.patience > 0 && epoch - result.best_epoch >= cfg.patience) break;
  }
  restore();
  return result;
}

#define EKG_INSTANTIATE_TRAINER(T)                                                        \
  template void adam_update<T>(i64, T*, const T*, T*, T*, i64, T, T, T, T);               \
  template class Adam<T>;                                                                 \
  template Tensor<T> make_batch<T>(const PatchDataset<T>&, const std::vector<i64>&,       \
                                   std::vector<int>*);                                    \
  template ConfusionMatrix evaluate<T>(EkgNet<T>&, const PatchDataset<T>&, Split,         \
                                       double*, int);                                     \
  template TrainResult train<T>(EkgNet<T>&, const PatchDataset<T>&, const TrainConfig&);

EKG_INSTANTIATE_TRAINER(float)
EKG_INSTANTIATE_TRAINER(double)
#undef EKG_INSTANTIATE_TRAINER

}  // namespace ekg
