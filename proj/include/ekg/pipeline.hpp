#pragma once

#include <string>

#include "ekg/config.hpp"

namespace ekg {

struct PipelineResult {
  std::string csv_log;      // epoch,tau,train_loss,train_oa,val_loss,val_oa
  std::string report_json;  // full run report
  MetricsReport test_metrics;
  int best_epoch = -1;
  double best_val_oa = 0.0;
  int num_classes = 0;
  int steps = 0;
};

// Assembles the dataset a RunConfig describes: load or synthesize the cube,
// normalize, extract neighbor blocks, stratified split.
template <typename T>
PatchDataset<T> build_dataset(const RunConfig& cfg);

// Completes the architecture from the dataset geometry.
ArchConfig resolve_arch(const RunConfig& cfg, int num_classes, i64 bands);

// Full training run. When out_dir is non-empty, writes checkpoint.ekgc,
// train_log.csv and report.json there.
template <typename T>
PipelineResult run_training_pipeline(const RunConfig& cfg, const std::string& out_dir);

// Loads a checkpoint, rebuilds the dataset, evaluates the test split.
// Writes eval_report.json when out_dir is non-empty.
template <typename T>
PipelineResult run_eval_pipeline(const RunConfig& cfg, const std::string& checkpoint_path,
                                 const std::string& out_dir);

}  // namespace ekg
