#pragma once

#include <cstdint>
#include <vector>

#include "ekg/densenet.hpp"
#include "ekg/hsi.hpp"

namespace ekg {

struct TrainConfig {
  int epochs = 80;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int batch_size = 16;
  std::uint64_t seed = 0;
  // Early stopping on validation OA; 0 keeps the fixed epoch budget.
  int patience = 0;

  void validate() const;
};

// One Adam update on a flat parameter array; bias-corrected moments.
template <typename T>
void adam_update(i64 n, T* param, const T* grad, T* m, T* v, i64 step, T lr, T beta1,
                 T beta2, T eps);

template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, const TrainConfig& cfg);
  void step();
  void zero_grad();
  i64 step_count() const { return t_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  i64 t_ = 0;
  T lr_, beta1_, beta2_, eps_;
};

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);
  int classes() const { return classes_; }
  void add(int truth, int predicted);
  i64 at(int truth, int predicted) const;
  i64 total() const;
  i64 row_sum(int truth) const;
  i64 col_sum(int predicted) const;
  void merge(const ConfusionMatrix& other);

 private:
  int classes_;
  std::vector<i64> counts_;
};

struct MetricsReport {
  double oa = 0.0, aa = 0.0, kappa = 0.0;
  std::vector<double> per_class_recall;  // NaN-free; absent classes listed below
  std::vector<int> absent_classes;
};

// OA = trace/total; AA = mean per-class recall over classes that appear;
// Kappa = (OA - p_e) / (1 - p_e) with p_e from row/column marginals.
MetricsReport metrics(const ConfusionMatrix& cm);

struct EpochStats {
  int epoch = 0;
  double tau = 0.0;
  double train_loss = 0.0, train_oa = 0.0;
  double val_loss = 0.0, val_oa = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> log;
  int best_epoch = -1;
  double best_val_oa = 0.0;
  int steps = 0;
};

// Epoch loop: anneal temperature, seeded shuffle, Adam on cross-entropy,
// validate, retain the best-validation state. The model is left holding the
// best state when training returns.
template <typename T>
TrainResult train(EkgNet<T>& model, const PatchDataset<T>& ds, const TrainConfig& cfg);

// Argmax evaluation over one split; ties break toward the lower class.
template <typename T>
ConfusionMatrix evaluate(EkgNet<T>& model, const PatchDataset<T>& ds, Split split,
                         double* mean_loss = nullptr, int batch_size = 32);

// Batch assembly used by both training and evaluation.
template <typename T>
Tensor<T> make_batch(const PatchDataset<T>& ds, const std::vector<i64>& idx,
                     std::vector<int>* targets);

}  // namespace ekg
