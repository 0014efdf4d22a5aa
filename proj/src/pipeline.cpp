#include "ekg/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "ekg/error.hpp"
#include "ekg/serialize.hpp"

namespace ekg {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw FormatError("write failed for '" + path + "'");
}

template <typename T>
HsiCube obtain_cube(const RunConfig& cfg) {
  if (cfg.use_synthetic) {
    SynthConfig sc = cfg.synth;
    sc.seed = SplitRng(cfg.seed).derive("synth").seed();
    return synthesize_dataset(sc);
  }
  if (cfg.cube_path.empty())
    throw ConfigError("no data source: set [data] cube=PATH or synthetic=true");
  return load_cube(cfg.cube_path);
}

std::string make_csv(const TrainResult& tr) {
  std::string csv = "epoch,tau,train_loss,train_oa,val_loss,val_oa\n";
  for (const auto& e : tr.log) {
    csv += std::to_string(e.epoch) + "," + fmt_double(e.tau) + "," +
           fmt_double(e.train_loss) + "," + fmt_double(e.train_oa) + "," +
           fmt_double(e.val_loss) + "," + fmt_double(e.val_oa) + "\n";
  }
  return csv;
}

nlohmann::json metrics_json(const MetricsReport& m) {
  nlohmann::json j;
  j["oa"] = m.oa;
  j["aa"] = m.aa;
  j["kappa"] = m.kappa;
  j["per_class_recall"] = m.per_class_recall;
  j["absent_classes"] = m.absent_classes;
  return j;
}

template <typename T>
std::string make_report(const RunConfig& cfg, const PatchDataset<T>& ds,
                        const MetricsReport& m, const TrainResult* tr) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["config"] = cfg.echo();
  j["classes"] = ds.num_classes;
  j["patch_counts"] = {{"train", ds.indices_of(Split::Train).size()},
                       {"val", ds.indices_of(Split::Val).size()},
                       {"test", ds.indices_of(Split::Test).size()}};
  j["split_notes"] = ds.notes;
  if (tr) {
    j["best_epoch"] = tr->best_epoch;
    j["best_val_oa"] = tr->best_val_oa;
    j["adam_steps"] = tr->steps;
  }
  j["test_metrics"] = metrics_json(m);
  return j.dump(2) + "\n";
}

}  // namespace

template <typename T>
PatchDataset<T> build_dataset(const RunConfig& cfg) {
  HsiCube cube = obtain_cube<T>(cfg);
  if (cfg.normalize_data) cube = normalize(cube);
  PatchDataset<T> ds = pad_and_extract<T>(cube, cfg.block_size);
  stratified_split(ds, cfg.ratios, cfg.seed);
  return ds;
}

ArchConfig resolve_arch(const RunConfig& cfg, int num_classes, i64 bands) {
  ArchConfig arch = cfg.arch;
  arch.num_classes = num_classes;
  arch.in_depth = bands;
  arch.in_height = cfg.block_size;
  arch.in_width = cfg.block_size;
  arch.validate();
  return arch;
}

template <typename T>
PipelineResult run_training_pipeline(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  PatchDataset<T> ds = build_dataset<T>(cfg);
  ArchConfig arch = resolve_arch(cfg, ds.num_classes, ds.bands);

  SplitRng init_rng = SplitRng(cfg.seed).derive("init");
  EkgNet<T> model = EkgNet<T>::build(arch, init_rng);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  TrainResult tr = train(model, ds, tc);

  MetricsReport test = metrics(evaluate(model, ds, Split::Test));

  RunConfig echo_cfg = cfg;
  echo_cfg.arch = arch;

  PipelineResult result;
  result.csv_log = make_csv(tr);
  result.report_json = make_report(echo_cfg, ds, test, &tr);
  result.test_metrics = test;
  result.best_epoch = tr.best_epoch;
  result.best_val_oa = tr.best_val_oa;
  result.num_classes = ds.num_classes;
  result.steps = tr.steps;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_file(out_dir + "/train_log.csv", result.csv_log);
    write_file(out_dir + "/report.json", result.report_json);
    save_checkpoint(out_dir + "/checkpoint.ekgc", echo_cfg.echo(), model.named_state());
  }
  return result;
}

template <typename T>
PipelineResult run_eval_pipeline(const RunConfig& cfg, const std::string& checkpoint_path,
                                 const std::string& out_dir) {
  cfg.validate();
  PatchDataset<T> ds = build_dataset<T>(cfg);
  ArchConfig arch = resolve_arch(cfg, ds.num_classes, ds.bands);

  RunConfig echo_cfg = cfg;
  echo_cfg.arch = arch;
  const auto expect = echo_cfg.echo();

  const CheckpointHeader header = read_checkpoint_header(checkpoint_path);
  // Geometry and architecture must agree between checkpoint and dataset.
  for (const auto& [key, value] : expect) {
    if (key.rfind("arch.", 0) != 0 && key != "run.precision" && key != "data.block_size")
      continue;
    auto it = header.config.find(key);
    if (it == header.config.end())
      throw FormatError("checkpoint '" + checkpoint_path + "': missing config key '" +
                        key + "'");
    if (it->second != value)
      throw FormatError("checkpoint '" + checkpoint_path + "': config mismatch for '" +
                        key + "': checkpoint has '" + it->second + "', run expects '" +
                        value + "'");
  }

  SplitRng init_rng = SplitRng(cfg.seed).derive("init");
  EkgNet<T> model = EkgNet<T>::build(arch, init_rng);
  auto state = model.named_state();
  load_checkpoint(checkpoint_path, state);

  MetricsReport test = metrics(evaluate(model, ds, Split::Test));

  PipelineResult result;
  result.report_json = make_report(echo_cfg, ds, test, nullptr);
  result.test_metrics = test;
  result.num_classes = ds.num_classes;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_file(out_dir + "/eval_report.json", result.report_json);
  }
  return result;
}

#define EKG_INSTANTIATE_PIPELINE(T)                                                       \
  template PatchDataset<T> build_dataset<T>(const RunConfig&);                            \
  template PipelineResult run_training_pipeline<T>(const RunConfig&, const std::string&); \
  template PipelineResult run_eval_pipeline<T>(const RunConfig&, const std::string&,      \
                                               const std::string&);

EKG_INSTANTIATE_PIPELINE(float)
EKG_INSTANTIATE_PIPELINE(double)
#undef EKG_INSTANTIATE_PIPELINE

}  // namespace ekg
