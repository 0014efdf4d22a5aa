// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Runs against the library exactly as the CLI does.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "ekg/densenet.hpp"
#include "ekg/expert_conv.hpp"
#include "ekg/kernels/kernels.hpp"
#include "ekg/ops.hpp"
#include "ekg/pipeline.hpp"
#include "ekg/trainer.hpp"
#include "ekg/verify.hpp"

using namespace ekg;

namespace {

constexpr std::uint64_t kSeed = 2024;

struct Criterion {
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Criterion> g_results;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

void record(const std::string& name, bool pass, const std::string& detail) {
  g_results.push_back({name, pass, detail});
  std::printf("[%s] %s  (%s)\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

void suite_criterion(const std::string& name, const SuiteResult& suite, double budget_s,
                     double elapsed) {
  int passed = 0;
  double worst = 0.0;
  for (const auto& c : suite.cases) {
    passed += c.pass;
    worst = std::max(worst, c.max_err);
  }
  const bool pass = suite.passed() && elapsed < budget_s;
  record(name, pass,
         std::to_string(passed) + "/" + std::to_string(suite.cases.size()) +
             " cases, worst err " + fmt(worst) + ", " + fmt(elapsed) + "s");
}

// --- criterion 1: dynamic conv vs per-sample oracle --------------------------

void dynamic_oracle_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult suite = verify_dynamic_oracle(kSeed);
  suite_criterion("dynamic-conv-oracle-equivalence", suite, 60.0, seconds_since(t0));
}

// --- criterion 2: one-hot reduction, bit-for-bit in f64 ----------------------

void one_hot_criterion() {
  SplitRng rng(kSeed);
  bool all_equal = true;
  std::string detail = "bitwise equal";
  for (i64 j = 0; j < 3 && all_equal; ++j) {
    ConvSpec spec;
    spec.in_channels = 4;
    spec.out_channels = 6;
    spec.groups = 2;
    spec.kernel = {3, 3, 3};
    spec.padding = {1, 1, 1};
    TempSchedule sched;
    SplitRng init = rng.derive("init" + std::to_string(j));
    ExpertConv<double> dyn(spec, 3, true, 2, 1, 0.25, sched, init);

    Tensor<double> x({3, 4, 4, 4, 4});
    for (i64 i = 0; i < x.numel(); ++i) x[i] = init.normal();
    Tensor<double> alpha = Tensor<double>::zeros({3, 3});
    for (i64 b = 0; b < 3; ++b) alpha[b * 3 + j] = 1.0;

    Tensor<double> dyn_out = dyn.forward_with_alpha(nullptr, x, alpha);

    // Static convolution with expert j's kernel and bias.
    const i64 rest = dyn.weight().numel() / 3;
    Tensor<double> wj({6, 2, 3, 3, 3});
    std::copy_n(dyn.weight().data() + j * rest, rest, wj.data());
    Tensor<double> bj({6});
    std::copy_n(dyn.bias().data() + j * 6, 6, bj.data());
    Tensor<double> want = conv3d_forward(x, wj, &bj, spec);

    if (std::memcmp(dyn_out.data(), want.data(),
                    sizeof(double) * static_cast<std::size_t>(want.numel())) != 0) {
      all_equal = false;
      detail = "mismatch at expert " + std::to_string(j);
    }
  }
  record("one-hot-reduction-bitwise", all_equal, detail);
}

// --- criterion 3: gradient checks --------------------------------------------

void grad_check_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult suite = verify_grad_check(kSeed);
  suite_criterion("gradient-checks", suite, 300.0, seconds_since(t0));
}

// --- criteria 4, 6, 7: property suites ----------------------------------------

void softmax_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  suite_criterion("softmax-temperature-properties", verify_softmax_properties(kSeed),
                  60.0, seconds_since(t0));
}

void metrics_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  suite_criterion("metrics-oracle", verify_metrics_oracle(kSeed), 60.0,
                  seconds_since(t0));
}

void split_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  suite_criterion("split-correctness", verify_split_properties(kSeed), 60.0,
                  seconds_since(t0));
}

// --- criterion 5: growth-rate formula -----------------------------------------

void growth_rate_criterion() {
  ArchConfig cfg;  // defaults: stages {4,6,8}, k0 = 8
  const auto rates = cfg.growth_rates();
  const bool pass = rates == std::vector<i64>{8, 16, 32} && growth_rate(1, 8) == 8 &&
                    growth_rate(2, 8) == 16 && growth_rate(3, 8) == 32;
  record("growth-rate-formula", pass,
         "default config -> " + std::to_string(rates[0]) + "," + std::to_string(rates[1]) +
             "," + std::to_string(rates[2]));
}

// --- criterion 8: padding arithmetic ------------------------------------------

void padding_criterion() {
  const i64 padded = padded_extent(145, 11);
  record("padding-arithmetic", padded == 155,
         "145-wide cube, block 11 -> " + std::to_string(padded));
}

// --- criterion 9: synthetic end-to-end ----------------------------------------

RunConfig e2e_config(i64 experts) {
  RunConfig cfg;
  cfg.seed = kSeed;
  cfg.use_synthetic = true;
  cfg.synth.classes = 3;
  cfg.synth.height = 32;
  cfg.synth.width = 32;
  cfg.synth.bands = 24;
  cfg.synth.noise_sigma = 0.05;
  cfg.block_size = 7;
  cfg.arch.stages = {2, 2};
  cfg.arch.k0 = 4;
  cfg.arch.groups = 4;
  cfg.arch.experts = experts;
  cfg.arch.reduction = 16;
  cfg.arch.mapping_blocks = 2;
  cfg.train.epochs = 30;
  cfg.train.batch_size = 16;
  cfg.train.lr = 1e-3;
  return cfg;
}

void end_to_end_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  PipelineResult dynamic_run = run_training_pipeline<float>(e2e_config(4), "");
  PipelineResult static_run = run_training_pipeline<float>(e2e_config(1), "");
  const double elapsed = seconds_since(t0);
  const double dyn_oa = dynamic_run.test_metrics.oa;
  const double sta_oa = static_run.test_metrics.oa;
  const bool pass = dyn_oa >= 0.95 && dyn_oa >= sta_oa - 0.01 && elapsed < 600.0;
  record("synthetic-end-to-end", pass,
         "dynamic OA " + fmt(dyn_oa) + ", static(K=1) OA " + fmt(sta_oa) + ", " +
             fmt(elapsed) + "s");
}

// --- criterion 10: single-batch overfit ---------------------------------------

void overfit_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig rc = e2e_config(2);
  rc.synth.height = 12;
  rc.synth.width = 12;
  rc.synth.bands = 8;
  rc.block_size = 5;
  rc.arch.stages = {1, 1};
  PatchDataset<float> ds = build_dataset<float>(rc);
  ArchConfig arch = resolve_arch(rc, ds.num_classes, ds.bands);
  SplitRng init = SplitRng(kSeed).derive("overfit-init");
  EkgNet<float> net = EkgNet<float>::build(arch, init);
  net.update_temperature(0);

  // One fixed batch of 20 training samples.
  std::vector<i64> idx = ds.indices_of(Split::Train);
  idx.resize(20);
  std::vector<int> targets;
  Tensor<float> x = make_batch(ds, idx, &targets);

  std::vector<Tensor<float>> params;
  for (auto& e : net.named_state())
    if (e.trainable) params.push_back(e.tensor);
  TrainConfig tc;
  tc.lr = 1e-3;
  Adam<float> opt(params, tc);

  double loss_val = 1e9;
  int steps = 0;
  while (steps < 200 && loss_val >= 0.01) {
    Tape<float> tape;
    opt.zero_grad();
    Tensor<float> logits = net.forward(&tape, x, true);
    Tensor<float> loss = cross_entropy(&tape, logits, targets);
    tape.backward(loss);
    opt.step();
    ++steps;
    loss_val = static_cast<double>(loss[0]);
  }
  record("single-batch-overfit", loss_val < 0.01,
         "cross-entropy " + fmt(loss_val) + " after " + std::to_string(steps) +
             " steps, " + fmt(seconds_since(t0)) + "s");
}

// --- criterion 11: determinism ------------------------------------------------

void determinism_criterion() {
  RunConfig cfg = e2e_config(2);
  cfg.synth.height = 16;
  cfg.synth.width = 16;
  cfg.synth.bands = 10;
  cfg.block_size = 5;
  cfg.arch.stages = {1, 1};
  cfg.train.epochs = 3;
  PipelineResult a = run_training_pipeline<float>(cfg, "");
  PipelineResult b = run_training_pipeline<float>(cfg, "");
  const bool pass = a.csv_log == b.csv_log && a.report_json == b.report_json;
  record("determinism-bitwise-logs", pass,
         pass ? "two runs, identical CSV and JSON" : "outputs differ");
}

}  // namespace

int main() {
  std::printf("acceptance suite (seed %llu, kernel backend %s)\n",
              static_cast<unsigned long long>(kSeed),
              kern::backend_name(kern::active_backend()));
  const auto t0 = std::chrono::steady_clock::now();

  dynamic_oracle_criterion();
  one_hot_criterion();
  grad_check_criterion();
  softmax_criterion();
  growth_rate_criterion();
  metrics_criterion();
  split_criterion();
  padding_criterion();
  end_to_end_criterion();
  overfit_criterion();
  determinism_criterion();

  int failures = 0;
  for (const auto& c : g_results) failures += !c.pass;
  std::printf("%zu/%zu criteria passed in %.1fs\n", g_results.size() - failures,
              g_results.size(), seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
