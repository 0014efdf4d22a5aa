// ekgnet: train / eval / verify / synth for the dynamic expert-kernel
// 3-D DenseNet on hyperspectral cubes.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ekg/config.hpp"
#include "ekg/error.hpp"
#include "ekg/hsi.hpp"
#include "ekg/kernels/kernels.hpp"
#include "ekg/pipeline.hpp"
#include "ekg/verify.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string precision;
  std::string ratios;
  std::int64_t seed = -1;
  std::int64_t block_size = -1;
  std::int64_t epochs = -1;
  std::int64_t experts = -1;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "config file (key=value with [sections])");
  cmd->add_option("--seed", f.seed, "root seed; all randomness derives from it");
  cmd->add_option("--out", f.out_dir, "output directory");
  cmd->add_option("--precision", f.precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));
  cmd->add_option("--block-size", f.block_size, "neighbor block size M (odd)");
  cmd->add_option("--ratios", f.ratios, "train:val:test split ratio, e.g. 6:1:3");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--experts", f.experts, "expert kernels per dynamic conv");
}

ekg::RunConfig resolve_config(const CommonFlags& f) {
  ekg::RunConfig cfg;
  if (!f.config_path.empty()) cfg = ekg::parse_config_file(f.config_path);
  if (f.seed >= 0) ekg::apply_override(cfg, "run.seed", std::to_string(f.seed));
  if (!f.out_dir.empty()) ekg::apply_override(cfg, "run.out_dir", f.out_dir);
  if (!f.precision.empty()) ekg::apply_override(cfg, "run.precision", f.precision);
  if (f.block_size >= 0)
    ekg::apply_override(cfg, "data.block_size", std::to_string(f.block_size));
  if (!f.ratios.empty()) ekg::apply_override(cfg, "data.ratios", f.ratios);
  if (f.epochs >= 0) ekg::apply_override(cfg, "train.epochs", std::to_string(f.epochs));
  if (f.experts >= 0)
    ekg::apply_override(cfg, "arch.experts", std::to_string(f.experts));
  cfg.validate();
  return cfg;
}

void print_metrics(const ekg::MetricsReport& m) {
  std::printf("test OA    %.6f\n", m.oa);
  std::printf("test AA    %.6f\n", m.aa);
  std::printf("test Kappa %.6f\n", m.kappa);
  std::printf("per-class recall:");
  for (double r : m.per_class_recall) std::printf(" %.4f", r);
  std::printf("\n");
  if (!m.absent_classes.empty()) {
    std::printf("classes absent from the split (excluded from AA):");
    for (int c : m.absent_classes) std::printf(" %d", c + 1);
    std::printf("\n");
  }
}

int cmd_train(const CommonFlags& flags) {
  ekg::RunConfig cfg = resolve_config(flags);
  const std::string out = cfg.out_dir.empty() ? "out" : cfg.out_dir;
  std::printf("kernel backend: %s\n",
              ekg::kern::backend_name(ekg::kern::active_backend()));
  ekg::PipelineResult r;
  if (cfg.precision == "f64")
    r = ekg::run_training_pipeline<double>(cfg, out);
  else
    r = ekg::run_training_pipeline<float>(cfg, out);
  std::printf("trained %d Adam steps; best validation OA %.6f at epoch %d\n", r.steps,
              r.best_val_oa, r.best_epoch);
  print_metrics(r.test_metrics);
  std::printf("wrote %s/checkpoint.ekgc, train_log.csv, report.json\n", out.c_str());
  return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint) {
  ekg::RunConfig cfg = resolve_config(flags);
  ekg::PipelineResult r;
  if (cfg.precision == "f64")
    r = ekg::run_eval_pipeline<double>(cfg, checkpoint, cfg.out_dir);
  else
    r = ekg::run_eval_pipeline<float>(cfg, checkpoint, cfg.out_dir);
  print_metrics(r.test_metrics);
  if (!cfg.out_dir.empty())
    std::printf("wrote %s/eval_report.json\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_verify(const CommonFlags& flags, const std::vector<std::string>& suites) {
  ekg::RunConfig cfg = resolve_config(flags);
  const auto results = ekg::run_verify(suites, cfg.seed);
  std::fputs(ekg::format_verify_table(results).c_str(), stdout);
  return ekg::all_passed(results) ? 0 : 1;
}

int cmd_synth(const CommonFlags& flags, const std::string& out_file) {
  ekg::RunConfig cfg = resolve_config(flags);
  ekg::SynthConfig sc = cfg.synth;
  sc.seed = ekg::SplitRng(cfg.seed).derive("synth").seed();
  const ekg::HsiCube cube = ekg::synthesize_dataset(sc);
  ekg::save_cube(cube, out_file);
  const auto hist = cube.class_histogram();
  std::printf("wrote %s: %lldx%lld pixels, %lld bands, %d classes\n", out_file.c_str(),
              static_cast<long long>(cube.height), static_cast<long long>(cube.width),
              static_cast<long long>(cube.bands), cube.num_classes());
  for (std::size_t c = 1; c < hist.size(); ++c)
    std::printf("  class %zu: %lld pixels\n", c, static_cast<long long>(hist[c]));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynamic expert-kernel 3-D DenseNet for hyperspectral classification"};
  app.require_subcommand(1);

  CommonFlags train_flags, eval_flags, verify_flags, synth_flags;
  std::string checkpoint, out_file = "synthetic.ekgh";
  std::vector<std::string> suites;

  CLI::App* train = app.add_subcommand("train", "train a model end to end");
  add_common_flags(train, train_flags);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common_flags(eval, eval_flags);
  eval->add_option("--checkpoint", checkpoint, "EKGC checkpoint path")->required();

  CLI::App* verify =
      app.add_subcommand("verify", "run oracle, gradient and property suites");
  add_common_flags(verify, verify_flags);
  verify->add_option("--suite", suites,
                     "suite selection (default: all): conv-oracle, dynamic-oracle, "
                     "grad-check, softmax-properties, metrics-oracle, split-properties");

  CLI::App* synth = app.add_subcommand("synth", "write a synthetic EKGH cube");
  add_common_flags(synth, synth_flags);
  synth->add_option("--out-file", out_file, "output cube path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(train_flags);
    if (eval->parsed()) return cmd_eval(eval_flags, checkpoint);
    if (verify->parsed()) return cmd_verify(verify_flags, suites);
    if (synth->parsed()) return cmd_synth(synth_flags, out_file);
  } catch (const ekg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
