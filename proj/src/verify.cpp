#include "ekg/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "ekg/densenet.hpp"
#include "ekg/error.hpp"
#include "ekg/expert_conv.hpp"
#include "ekg/hsi.hpp"
#include "ekg/kernels/kernels.hpp"
#include "ekg/ops.hpp"
#include "ekg/trainer.hpp"

namespace ekg {

namespace {

std::string fmt_err(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, SplitRng& rng, double scale = 1.0,
                        bool requires_grad = false) {
  Tensor<T> t(std::move(shape));
  for (i64 i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.normal(0.0, scale));
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

// Rows of positive weights summing to one.
template <typename T>
Tensor<T> random_alpha(i64 b, i64 k, SplitRng& rng) {
  Tensor<T> a({b, k});
  for (i64 i = 0; i < b; ++i) {
    double sum = 0.0;
    std::vector<double> row(static_cast<std::size_t>(k));
    for (i64 j = 0; j < k; ++j) {
      row[static_cast<std::size_t>(j)] = rng.uniform(0.05, 1.0);
      sum += row[static_cast<std::size_t>(j)];
    }
    for (i64 j = 0; j < k; ++j)
      a[i * k + j] = static_cast<T>(row[static_cast<std::size_t>(j)] / sum);
  }
  return a;
}

double max_abs_diff_f(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0.0;
  for (i64 i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

double max_abs_diff_d(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0.0;
  for (i64 i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

GradCheckReport check_gradient(const std::function<double()>& loss_fn,
                               Tensor<double>& param,
                               const std::vector<double>& analytic, double h, double rtol,
                               double atol, i64 max_probes, SplitRng& rng) {
  if (static_cast<i64>(analytic.size()) != param.numel())
    throw ShapeError("check_gradient: analytic gradient length mismatch");
  std::vector<i64> probes;
  if (param.numel() <= max_probes) {
    for (i64 i = 0; i < param.numel(); ++i) probes.push_back(i);
  } else {
    std::set<i64> chosen;
    while (static_cast<i64>(chosen.size()) < max_probes)
      chosen.insert(static_cast<i64>(rng.uniform_int(
          static_cast<std::uint64_t>(param.numel()))));
    probes.assign(chosen.begin(), chosen.end());
  }

  GradCheckReport report;
  report.pass = true;
  for (i64 i : probes) {
    const double old = param[i];
    param[i] = old + h;
    const double f1 = loss_fn();
    param[i] = old - h;
    const double f2 = loss_fn();
    param[i] = old;
    const double numeric = (f1 - f2) / (2.0 * h);
    const double a = analytic[static_cast<std::size_t>(i)];
    const double scale = atol + std::max(std::fabs(a), std::fabs(numeric));
    const double err = std::fabs(a - numeric) / scale;
    report.max_err = std::max(report.max_err, err);
    if (err > rtol) report.pass = false;
  }
  report.probes = static_cast<i64>(probes.size());
  return report;
}

// ---------------------------------------------------------------------------
// conv-oracle: optimized forward vs seven-loop oracle on randomized draws.

namespace {

template <typename T>
VerifyCase conv_oracle_once(SplitRng& rng, int index, double tol) {
  const i64 G = static_cast<i64>(rng.uniform_int(3)) + 1;
  ConvSpec spec;
  spec.groups = G;
  spec.in_channels = G * (static_cast<i64>(rng.uniform_int(2)) + 1);
  spec.out_channels = G * (static_cast<i64>(rng.uniform_int(2)) + 1);
  for (int a = 0; a < 3; ++a) {
    spec.kernel[a] = rng.uniform_int(2) ? 3 : 1;
    spec.stride[a] = static_cast<i64>(rng.uniform_int(2)) + 1;
    spec.padding[a] = static_cast<i64>(rng.uniform_int(2));
    spec.dilation[a] = (spec.kernel[a] == 3 && rng.uniform_int(3) == 0) ? 2 : 1;
  }
  const i64 B = static_cast<i64>(rng.uniform_int(3)) + 1;
  std::array<i64, 3> in{};
  for (int a = 0; a < 3; ++a) {
    const i64 span = spec.dilation[a] * (spec.kernel[a] - 1) + 1;
    in[a] = std::max<i64>(span - 2 * spec.padding[a],
                          static_cast<i64>(rng.uniform_int(4)) + 3);
  }

  SplitRng vals = rng.derive("values" + std::to_string(index));
  Tensor<T> x = random_tensor<T>({B, spec.in_channels, in[0], in[1], in[2]}, vals);
  Tensor<T> w = random_tensor<T>({spec.out_channels, spec.group_in_channels(),
                                  spec.kernel[0], spec.kernel[1], spec.kernel[2]},
                                 vals, 0.5);
  Tensor<T> b = random_tensor<T>({spec.out_channels}, vals, 0.2);

  Tensor<T> fast = conv3d_forward(x, w, &b, spec);
  Tensor<T> naive = conv3d_naive(x, w, &b, spec);
  double diff;
  if constexpr (std::is_same_v<T, float>)
    diff = max_abs_diff_f(fast, naive);
  else
    diff = max_abs_diff_d(fast, naive);

  VerifyCase c;
  c.name = std::string("draw") + std::to_string(index) +
           (std::is_same_v<T, float> ? "/f32" : "/f64") + " B" + std::to_string(B) +
           " C" + std::to_string(spec.in_channels) + "->" +
           std::to_string(spec.out_channels) + " G" + std::to_string(G);
  c.max_err = diff;
  c.pass = diff <= tol;
  return c;
}

}  // namespace

SuiteResult verify_conv_oracle(std::uint64_t seed) {
  SuiteResult suite{"conv-oracle", {}};
  SplitRng rng = SplitRng(seed).derive("conv-oracle");
  for (int i = 0; i < 30; ++i) suite.cases.push_back(conv_oracle_once<float>(rng, i, 1e-5));
  for (int i = 0; i < 30; ++i)
    suite.cases.push_back(conv_oracle_once<double>(rng, 100 + i, 1e-10));
  return suite;
}

// ---------------------------------------------------------------------------
// dynamic-oracle: batch-merged grouped convolution vs per-sample oracle.

namespace {

template <typename T>
VerifyCase dynamic_oracle_once(SplitRng& rng, int index, double tol) {
  const i64 B = static_cast<i64>(rng.uniform_int(4)) + 1;
  const i64 K = i64{1} << rng.uniform_int(3);   // 1, 2, 4
  const i64 G = i64{1} << rng.uniform_int(3);   // 1, 2, 4
  const i64 S = rng.uniform_int(2) ? 3 : 1;
  ConvSpec spec;
  spec.groups = G;
  spec.in_channels = G * (static_cast<i64>(rng.uniform_int(2)) + 1);
  spec.out_channels = G * (static_cast<i64>(rng.uniform_int(2)) + 1);
  spec.kernel = {S, S, S};
  spec.padding = {S / 2, S / 2, S / 2};

  SplitRng vals = rng.derive("values" + std::to_string(index));
  const i64 D = static_cast<i64>(vals.uniform_int(3)) + 3;
  const i64 H = static_cast<i64>(vals.uniform_int(3)) + 3;
  const i64 W = static_cast<i64>(vals.uniform_int(3)) + 3;
  Tensor<T> x = random_tensor<T>({B, spec.in_channels, D, H, W}, vals);
  Tensor<T> weight = random_tensor<T>({K, spec.out_channels, spec.group_in_channels(),
                                       S, S, S},
                                      vals, 0.5);
  Tensor<T> bias = random_tensor<T>({K, spec.out_channels}, vals, 0.2);
  Tensor<T> alpha = random_alpha<T>(B, K, vals);

  // Batch-merged path via the aggregation matmul + G*B grouped conv.
  Tensor<T> flat = weight.reshape({K, weight.numel() / K});
  Tensor<T> agg = matmul<T>(nullptr, alpha, flat)
                      .reshape({B * spec.out_channels, spec.group_in_channels(), S, S, S});
  Tensor<T> agg_b =
      matmul<T>(nullptr, alpha, bias).reshape({B * spec.out_channels});
  ConvSpec merged = spec;
  merged.in_channels = B * spec.in_channels;
  merged.out_channels = B * spec.out_channels;
  merged.groups = G * B;
  Tensor<T> ym = conv3d_forward(x.reshape({1, B * spec.in_channels, D, H, W}), agg,
                                &agg_b, merged);
  const auto oe = spec.output_extents({D, H, W});
  Tensor<T> merged_out = ym.reshape({B, spec.out_channels, oe[0], oe[1], oe[2]});

  Tensor<T> oracle = ExpertConv<T>::per_sample_oracle(x, alpha, weight, &bias, spec);

  double diff;
  if constexpr (std::is_same_v<T, float>)
    diff = max_abs_diff_f(merged_out, oracle);
  else
    diff = max_abs_diff_d(merged_out, oracle);

  VerifyCase c;
  c.name = std::string("draw") + std::to_string(index) +
           (std::is_same_v<T, float> ? "/f32" : "/f64") + " B" + std::to_string(B) +
           " K" + std::to_string(K) + " G" + std::to_string(G) + " S" +
           std::to_string(S);
  c.max_err = diff;
  c.pass = diff <= tol;
  return c;
}

}  // namespace

SuiteResult verify_dynamic_oracle(std::uint64_t seed) {
  SuiteResult suite{"dynamic-oracle", {}};
  SplitRng rng = SplitRng(seed).derive("dynamic-oracle");
  for (int i = 0; i < 52; ++i)
    suite.cases.push_back(dynamic_oracle_once<float>(rng, i, 1e-5));
  for (int i = 0; i < 52; ++i)
    suite.cases.push_back(dynamic_oracle_once<double>(rng, 100 + i, 1e-10));
  return suite;
}

// ---------------------------------------------------------------------------
// grad-check: every layer type against central finite differences (f64).

namespace {

constexpr double kFdStep = 1e-4;
constexpr double kLayerRtol = 1e-4;
constexpr double kModelRtol = 1e-3;
constexpr double kFdAtol = 1e-7;

using D = double;

VerifyCase report_case(const std::string& name, const GradCheckReport& r, double rtol) {
  VerifyCase c;
  c.name = name;
  c.pass = r.pass;
  c.max_err = r.max_err;
  c.detail = "probes=" + std::to_string(r.probes) + " rtol=" + fmt_err(rtol);
  return c;
}

// Loss = dot(r, op(x)) with a fixed random projection r.
VerifyCase gradcheck_gelu(SplitRng& rng) {
  Tensor<D> x = random_tensor<D>({2, 3, 4}, rng, 1.0, true);
  Tensor<D> r = random_tensor<D>({2, 3, 4}, rng);
  auto loss_fn = [&]() {
    Tensor<D> y = gelu<D>(nullptr, x);
    return kern::vdot(y.numel(), y.data(), r.data());
  };
  Tape<D> tape;
  Tensor<D> y = gelu(&tape, x);
  Tensor<D> loss = sum_all(&tape, mul(&tape, y, r));
  tape.backward(loss);
  std::vector<D> analytic(x.grad(), x.grad() + x.numel());
  auto rep = check_gradient(loss_fn, x, analytic, kFdStep, kLayerRtol, kFdAtol, 24, rng);
  return report_case("gelu/dx", rep, kLayerRtol);
}

std::vector<VerifyCase> gradcheck_batch_norm(SplitRng& rng) {
  Tensor<D> x = random_tensor<D>({3, 4, 2, 2, 2}, rng, 1.0, true);
  Tensor<D> r = random_tensor<D>({3, 4, 2, 2, 2}, rng);
  BatchNorm<D> bn(4);
  for (i64 i = 0; i < 4; ++i) {
    bn.gamma[i] = 1.0 + 0.1 * static_cast<double>(i);
    bn.beta[i] = 0.05 * static_cast<double>(i);
  }
  auto loss_fn = [&]() {
    Tensor<D> y = batch_norm<D>(nullptr, x, bn, true);
    return kern::vdot(y.numel(), y.data(), r.data());
  };
  Tape<D> tape;
  Tensor<D> loss = sum_all(&tape, mul(&tape, batch_norm(&tape, x, bn, true), r));
  tape.backward(loss);
  std::vector<VerifyCase> cases;
  std::vector<D> gx(x.grad(), x.grad() + x.numel());
  cases.push_back(report_case(
      "batch_norm/dx",
      check_gradient(loss_fn, x, gx, kFdStep, kLayerRtol, kFdAtol, 24, rng), kLayerRtol));
  std::vector<D> gg(bn.gamma.grad(), bn.gamma.grad() + 4);
  cases.push_back(report_case(
      "batch_norm/dgamma",
      check_gradient(loss_fn, bn.gamma, gg, kFdStep, kLayerRtol, kFdAtol, 8, rng),
      kLayerRtol));
  std::vector<D> gb(bn.beta.grad(), bn.beta.grad() + 4);
  cases.push_back(report_case(
      "batch_norm/dbeta",
      check_gradient(loss_fn, bn.beta, gb, kFdStep, kLayerRtol, kFdAtol, 8, rng),
      kLayerRtol));
  return cases;
}

std::vector<VerifyCase> gradcheck_conv3d(SplitRng& rng) {
  ConvSpec spec;
  spec.in_channels = 4;
  spec.out_channels = 6;
  spec.groups = 2;
  spec.kernel = {3, 3, 3};
  spec.stride = {1, 2, 1};
  spec.padding = {1, 1, 2};
  spec.dilation = {1, 1, 2};
  Tensor<D> x = random_tensor<D>({2, 4, 4, 5, 5}, rng, 1.0, true);
  Tensor<D> w = random_tensor<D>({6, 2, 3, 3, 3}, rng, 0.5, true);
  Tensor<D> b = random_tensor<D>({6}, rng, 0.2, true);
  const auto oe = spec.output_extents({4, 5, 5});
  Tensor<D> r = random_tensor<D>({2, 6, oe[0], oe[1], oe[2]}, rng);
  auto loss_fn = [&]() {
    Tensor<D> y = conv3d_forward(x, w, &b, spec);
    return kern::vdot(y.numel(), y.data(), r.data());
  };
  Tape<D> tape;
  Tensor<D> loss = sum_all(&tape, mul(&tape, conv3d(&tape, x, w, &b, spec), r));
  tape.backward(loss);
  std::vector<VerifyCase> cases;
  std::vector<D> gx(x.grad(), x.grad() + x.numel());
  cases.push_back(report_case(
      "conv3d/dx", check_gradient(loss_fn, x, gx, kFdStep, kLayerRtol, kFdAtol, 24, rng),
      kLayerRtol));
  std::vector<D> gw(w.grad(), w.grad() + w.numel());
  cases.push_back(report_case(
      "conv3d/dw", check_gradient(loss_fn, w, gw, kFdStep, kLayerRtol, kFdAtol, 24, rng),
      kLayerRtol));
  std::vector<D> gb(b.grad(), b.grad() + b.numel());
  cases.push_back(report_case(
      "conv3d/db", check_gradient(loss_fn, b, gb, kFdStep, kLayerRtol, kFdAtol, 6, rng),
      kLayerRtol));
  return cases;
}

std::vector<VerifyCase> gradcheck_dynamic(SplitRng& rng) {
  ConvSpec spec;
  spec.in_channels = 4;
  spec.out_channels = 4;
  spec.groups = 2;
  spec.kernel = {3, 3, 3};
  spec.padding = {1, 1, 1};
  TempSchedule sched;
  SplitRng init = rng.derive("dyn-init");
  ExpertConv<D> dyn(spec, 3, true, 2, 2, 0.25, sched, init);
  dyn.mapping().set_tau(2.5);

  Tensor<D> x = random_tensor<D>({2, 4, 3, 3, 3}, rng, 1.0, true);
  Tensor<D> r = random_tensor<D>({2, 4, 3, 3, 3}, rng);
  auto loss_fn = [&]() {
    Tensor<D> y = dyn.forward(nullptr, x, true);
    return kern::vdot(y.numel(), y.data(), r.data());
  };
  Tape<D> tape;
  Tensor<D> loss = sum_all(&tape, mul(&tape, dyn.forward(&tape, x, true), r));
  tape.backward(loss);

  std::vector<VerifyCase> cases;
  auto check_param = [&](const std::string& name, Tensor<D>& p, i64 probes) {
    std::vector<D> g(p.grad(), p.grad() + p.numel());
    cases.push_back(report_case(
        "dynamic_conv/" + name,
        check_gradient(loss_fn, p, g, kFdStep, kLayerRtol, kFdAtol, probes, rng),
        kLayerRtol));
  };
  check_param("experts.weight", dyn.weight(), 24);
  check_param("experts.bias", dyn.bias(), 8);
  std::vector<ParamEntry<D>> entries;
  dyn.mapping().collect("mapping.", entries);
  for (auto& e : entries) {
    // The alpha path: every mapping parameter must receive gradient.
    if (!e.trainable) continue;
    if (e.name == "mapping.proj.weight" || e.name == "mapping.block0.gate" ||
        e.name == "mapping.block0.conv.weight" || e.name == "mapping.final_bn.gamma")
      check_param(e.name, e.tensor, 8);
  }
  std::vector<D> gx(x.grad(), x.grad() + x.numel());
  cases.push_back(report_case(
      "dynamic_conv/dx",
      check_gradient(loss_fn, x, gx, kFdStep, kLayerRtol, kFdAtol, 16, rng), kLayerRtol));
  return cases;
}

std::vector<VerifyCase> gradcheck_mapping(SplitRng& rng) {
  TempSchedule sched;
  SplitRng init = rng.derive("map-init");
  MappingNetwork<D> map(6, 4, 2, 2, 0.25, sched, init);
  map.set_tau(1.5);
  Tensor<D> x = random_tensor<D>({3, 6, 2, 2, 2}, rng, 1.0, true);
  Tensor<D> r = random_tensor<D>({3, 4}, rng);
  auto loss_fn = [&]() {
    Tensor<D> a = map.attention(nullptr, x, true);
    return kern::vdot(a.numel(), a.data(), r.data());
  };
  Tape<D> tape;
  Tensor<D> loss = sum_all(&tape, mul(&tape, map.attention(&tape, x, true), r));
  tape.backward(loss);

  std::vector<VerifyCase> cases;
  std::vector<ParamEntry<D>> entries;
  map.collect("mapping.", entries);
  for (auto& e : entries) {
    if (!e.trainable) continue;
    if (e.name.find("gate") == std::string::npos &&
        e.name.find("block0.conv.weight") == std::string::npos &&
        e.name.find("skip.weight") == std::string::npos &&
        e.name.find("proj.bias") == std::string::npos)
      continue;
    std::vector<D> g(e.tensor.grad(), e.tensor.grad() + e.tensor.numel());
    cases.push_back(report_case(
        "mapping/" + e.name,
        check_gradient(loss_fn, e.tensor, g, kFdStep, kLayerRtol, kFdAtol, 8, rng),
        kLayerRtol));
  }
  std::vector<D> gx(x.grad(), x.grad() + x.numel());
  cases.push_back(report_case(
      "mapping/dx", check_gradient(loss_fn, x, gx, kFdStep, kLayerRtol, kFdAtol, 16, rng),
      kLayerRtol));
  return cases;
}

std::vector<VerifyCase> gradcheck_linear_head(SplitRng& rng) {
  Tensor<D> x = random_tensor<D>({3, 5}, rng, 1.0, true);
  Tensor<D> w = random_tensor<D>({4, 5}, rng, 0.5, true);
  Tensor<D> b = random_tensor<D>({4}, rng, 0.2, true);
  std::vector<int> targets{1, 3, 0};
  auto loss_fn = [&]() {
    Tensor<D> y = linear<D>(nullptr, x, w, &b);
    Tensor<D> l = cross_entropy<D>(nullptr, y, targets);
    return l[0];
  };
  Tape<D> tape;
  Tensor<D> loss = cross_entropy(&tape, linear(&tape, x, w, &b), targets);
  tape.backward(loss);
  std::vector<VerifyCase> cases;
  std::vector<D> gw(w.grad(), w.grad() + w.numel());
  cases.push_back(report_case(
      "linear_head/dw",
      check_gradient(loss_fn, w, gw, kFdStep, kLayerRtol, kFdAtol, 20, rng), kLayerRtol));
  std::vector<D> gb(b.grad(), b.grad() + b.numel());
  cases.push_back(report_case(
      "linear_head/db",
      check_gradient(loss_fn, b, gb, kFdStep, kLayerRtol, kFdAtol, 4, rng), kLayerRtol));
  std::vector<D> gx(x.grad(), x.grad() + x.numel());
  cases.push_back(report_case(
      "linear_head/dx",
      check_gradient(loss_fn, x, gx, kFdStep, kLayerRtol, kFdAtol, 15, rng), kLayerRtol));
  return cases;
}

std::vector<VerifyCase> gradcheck_micro_model(SplitRng& rng) {
  ArchConfig cfg;
  cfg.stages = {1, 1};
  cfg.k0 = 2;
  cfg.groups = 2;
  cfg.experts = 2;
  cfg.reduction = 4;
  cfg.mapping_blocks = 1;
  cfg.num_classes = 3;
  cfg.in_depth = 6;
  cfg.in_height = 5;
  cfg.in_width = 5;
  SplitRng init = rng.derive("micro-init");
  EkgNet<D> net = EkgNet<D>::build(cfg, init);
  for (auto& e : net.named_state())
    if (e.name.find("tau") != std::string::npos) e.tensor[0] = 2.0;

  Tensor<D> x = random_tensor<D>({2, 1, 6, 5, 5}, rng, 1.0, true);
  std::vector<int> targets{2, 0};
  auto loss_fn = [&]() {
    Tensor<D> logits = net.forward(nullptr, x, true);
    Tensor<D> l = cross_entropy<D>(nullptr, logits, targets);
    return l[0];
  };
  Tape<D> tape;
  Tensor<D> loss = cross_entropy(&tape, net.forward(&tape, x, true), targets);
  tape.backward(loss);

  std::vector<VerifyCase> cases;
  SplitRng pick = rng.derive("micro-pick");
  for (auto& e : net.named_state()) {
    if (!e.trainable) continue;
    // Sample a few entries of every fourth tensor plus all structurally
    // interesting ones to keep runtime bounded.
    const bool interesting = e.name.find("experts.") != std::string::npos ||
                             e.name.find("gate") != std::string::npos ||
                             e.name == "stem.weight" || e.name == "head.weight" ||
                             e.name.find("transition") != std::string::npos;
    if (!interesting && pick.uniform_int(4) != 0) continue;
    std::vector<D> g(e.tensor.grad(), e.tensor.grad() + e.tensor.numel());
    cases.push_back(report_case(
        "micro_model/" + e.name,
        check_gradient(loss_fn, e.tensor, g, kFdStep, kModelRtol, kFdAtol, 4, pick),
        kModelRtol));
  }
  std::vector<D> gx(x.grad(), x.grad() + x.numel());
  cases.push_back(report_case(
      "micro_model/dx",
      check_gradient(loss_fn, x, gx, kFdStep, kModelRtol, kFdAtol, 8, pick), kModelRtol));
  return cases;
}

}  // namespace

SuiteResult verify_grad_check(std::uint64_t seed) {
  SuiteResult suite{"grad-check", {}};
  SplitRng rng = SplitRng(seed).derive("grad-check");
  suite.cases.push_back(gradcheck_gelu(rng));
  for (auto& c : gradcheck_batch_norm(rng)) suite.cases.push_back(c);
  for (auto& c : gradcheck_conv3d(rng)) suite.cases.push_back(c);
  for (auto& c : gradcheck_dynamic(rng)) suite.cases.push_back(c);
  for (auto& c : gradcheck_mapping(rng)) suite.cases.push_back(c);
  for (auto& c : gradcheck_linear_head(rng)) suite.cases.push_back(c);
  for (auto& c : gradcheck_micro_model(rng)) suite.cases.push_back(c);
  return suite;
}

// ---------------------------------------------------------------------------
// softmax-properties on random logit vectors.

SuiteResult verify_softmax_properties(std::uint64_t seed) {
  SuiteResult suite{"softmax-properties", {}};
  SplitRng rng = SplitRng(seed).derive("softmax");
  const std::vector<double> taus{0.05, 0.3, 1.0, 2.0, 10.0, 100.0, 1e4};

  double worst_sum = 0.0, worst_mono = 0.0;
  bool sums_ok = true, argmax_ok = true, mono_ok = true, positive_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    const i64 k = static_cast<i64>(rng.uniform_int(7)) + 2;
    Tensor<double> z({1, k});
    for (i64 j = 0; j < k; ++j) z[j] = rng.uniform(-5.0, 5.0);
    i64 base_argmax = 0;
    for (i64 j = 1; j < k; ++j)
      if (z[j] > z[base_argmax]) base_argmax = j;

    double prev_max = 2.0;
    for (double tau : taus) {
      Tensor<double> s = softmax_with_temperature<double>(nullptr, z, tau, 1);
      double sum = 0.0, mx = 0.0;
      i64 am = 0;
      for (i64 j = 0; j < k; ++j) {
        sum += s[j];
        if (s[j] <= 0.0) positive_ok = false;
        if (s[j] > s[am]) am = j;
        mx = std::max(mx, s[j]);
      }
      worst_sum = std::max(worst_sum, std::fabs(sum - 1.0));
      if (std::fabs(sum - 1.0) > 1e-6) sums_ok = false;
      if (am != base_argmax) argmax_ok = false;
      if (mx > prev_max + 1e-12) {
        mono_ok = false;
        worst_mono = std::max(worst_mono, mx - prev_max);
      }
      prev_max = mx;
    }
  }
  suite.cases.push_back({"row-sums-within-1e-6", sums_ok, worst_sum, "100 random vectors"});
  suite.cases.push_back({"entries-strictly-positive", positive_ok, 0.0, ""});
  suite.cases.push_back({"argmax-invariant-to-tau", argmax_ok, 0.0, ""});
  suite.cases.push_back(
      {"max-weight-nonincreasing-in-tau", mono_ok, worst_mono, "tau grid 0.05..1e4"});
  return suite;
}

// ---------------------------------------------------------------------------
// metrics-oracle: library metrics vs an independent long-double transcription.

namespace {

struct LongMetrics {
  long double oa, aa, kappa;
};

LongMetrics metrics_transcription(const ConfusionMatrix& cm) {
  const int c = cm.classes();
  long double total = 0, diag = 0;
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) total += static_cast<long double>(cm.at(i, j));
  for (int i = 0; i < c; ++i) diag += static_cast<long double>(cm.at(i, i));
  const long double oa = diag / total;
  long double recall_sum = 0;
  int present = 0;
  for (int i = 0; i < c; ++i) {
    long double row = 0;
    for (int j = 0; j < c; ++j) row += static_cast<long double>(cm.at(i, j));
    if (row > 0) {
      recall_sum += static_cast<long double>(cm.at(i, i)) / row;
      ++present;
    }
  }
  const long double aa = recall_sum / present;
  long double pe = 0;
  for (int i = 0; i < c; ++i) {
    long double row = 0, col = 0;
    for (int j = 0; j < c; ++j) {
      row += static_cast<long double>(cm.at(i, j));
      col += static_cast<long double>(cm.at(j, i));
    }
    pe += row * col;
  }
  pe /= total * total;
  return {oa, aa, (oa - pe) / (1.0L - pe)};
}

}  // namespace

SuiteResult verify_metrics_oracle(std::uint64_t seed) {
  SuiteResult suite{"metrics-oracle", {}};
  SplitRng rng = SplitRng(seed).derive("metrics");
  for (int trial = 0; trial < 20; ++trial) {
    const int c = static_cast<int>(rng.uniform_int(5)) + 2;  // 2..6
    ConfusionMatrix cm(c);
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j) {
        // Diagonal-heavy so row sums are never zero.
        const i64 n = static_cast<i64>(rng.uniform_int(100)) + (i == j ? 1 : 0);
        for (i64 t = 0; t < n; ++t) cm.add(i, j);
      }
    const MetricsReport got = metrics(cm);
    const LongMetrics want = metrics_transcription(cm);
    const double err = std::max(
        {std::fabs(got.oa - static_cast<double>(want.oa)),
         std::fabs(got.aa - static_cast<double>(want.aa)),
         std::fabs(got.kappa - static_cast<double>(want.kappa))});
    suite.cases.push_back({"random-cm-" + std::to_string(trial) + "-C" +
                               std::to_string(c),
                           err <= 1e-12, err, ""});
  }
  {
    ConfusionMatrix cm(4);
    for (int i = 0; i < 4; ++i)
      for (i64 t = 0; t < 10 + 3 * i; ++t) cm.add(i, i);
    const MetricsReport got = metrics(cm);
    const bool exact = got.oa == 1.0 && got.aa == 1.0 && got.kappa == 1.0;
    suite.cases.push_back({"diagonal-exact-ones", exact,
                           std::fabs(got.oa - 1.0) + std::fabs(got.aa - 1.0) +
                               std::fabs(got.kappa - 1.0),
                           ""});
  }
  return suite;
}

// ---------------------------------------------------------------------------
// split-properties on a synthetic dataset with exactly 100 pixels per class.

SuiteResult verify_split_properties(std::uint64_t seed) {
  SuiteResult suite{"split-properties", {}};
  SynthConfig sc;
  sc.classes = 4;
  sc.height = 20;
  sc.width = 20;
  sc.bands = 8;
  sc.seed = seed;
  HsiCube cube = synthesize_dataset(sc);
  PatchDataset<float> ds = pad_and_extract<float>(cube, 5);
  stratified_split(ds, {6, 1, 3}, seed);

  bool counts_ok = true;
  for (int cls = 0; cls < 4; ++cls) {
    i64 n[3] = {0, 0, 0};
    for (i64 i = 0; i < ds.count(); ++i)
      if (ds.labels[static_cast<std::size_t>(i)] == cls)
        ++n[static_cast<int>(ds.split[static_cast<std::size_t>(i)])];
    if (n[0] != 60 || n[1] != 10 || n[2] != 30) counts_ok = false;
  }
  suite.cases.push_back({"per-class-60-10-30", counts_ok, 0.0, "4 classes x 100 pixels"});

  // Exhaustive and disjoint by construction of the assignment vector; check
  // that every patch has exactly one split and totals add up.
  const i64 total = static_cast<i64>(ds.indices_of(Split::Train).size() +
                                     ds.indices_of(Split::Val).size() +
                                     ds.indices_of(Split::Test).size());
  suite.cases.push_back(
      {"partitions-cover-all-labeled", total == ds.count(), 0.0,
       std::to_string(total) + "/" + std::to_string(ds.count())});

  PatchDataset<float> ds2 = pad_and_extract<float>(cube, 5);
  stratified_split(ds2, {6, 1, 3}, seed);
  suite.cases.push_back({"seed-reproducible", ds.split == ds2.split, 0.0, ""});

  stratified_split(ds2, {6, 1, 3}, seed + 1);
  suite.cases.push_back({"different-seed-differs", ds.split != ds2.split, 0.0, ""});
  return suite;
}

std::vector<SuiteResult> run_verify(const std::vector<std::string>& suites,
                                    std::uint64_t seed) {
  const std::vector<std::string> all{"conv-oracle",     "dynamic-oracle",
                                     "grad-check",      "softmax-properties",
                                     "metrics-oracle",  "split-properties"};
  std::vector<std::string> selected = suites.empty() ? all : suites;
  std::vector<SuiteResult> results;
  for (const auto& name : selected) {
    if (name == "conv-oracle")
      results.push_back(verify_conv_oracle(seed));
    else if (name == "dynamic-oracle")
      results.push_back(verify_dynamic_oracle(seed));
    else if (name == "grad-check")
      results.push_back(verify_grad_check(seed));
    else if (name == "softmax-properties")
      results.push_back(verify_softmax_properties(seed));
    else if (name == "metrics-oracle")
      results.push_back(verify_metrics_oracle(seed));
    else if (name == "split-properties")
      results.push_back(verify_split_properties(seed));
    else
      throw ConfigError("verify: unknown suite '" + name + "'");
  }
  return results;
}

std::string format_verify_table(const std::vector<SuiteResult>& results) {
  std::string out;
  for (const auto& suite : results) {
    int passed = 0;
    double worst = 0.0;
    for (const auto& c : suite.cases) {
      passed += c.pass;
      worst = std::max(worst, c.max_err);
    }
    out += (suite.passed() ? "[PASS] " : "[FAIL] ") + suite.suite + "  (" +
           std::to_string(passed) + "/" + std::to_string(suite.cases.size()) +
           " cases, worst err " + fmt_err(worst) + ")\n";
    for (const auto& c : suite.cases) {
      if (c.pass) continue;
      out += "       FAILED case " + c.name + "  err=" + fmt_err(c.max_err);
      if (!c.detail.empty()) out += "  " + c.detail;
      out += "\n";
    }
  }
  return out;
}

bool all_passed(const std::vector<SuiteResult>& results) {
  for (const auto& r : results)
    if (!r.passed()) return false;
  return !results.empty();
}

}  // namespace ekg
