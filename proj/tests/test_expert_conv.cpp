#include <doctest.h>

#include <cmath>
#include <cstring>

#include "ekg/error.hpp"
#include "ekg/expert_conv.hpp"

using namespace ekg;

namespace {

ConvSpec make_spec(i64 cin, i64 cout, i64 groups, i64 s) {
  ConvSpec spec;
  spec.in_channels = cin;
  spec.out_channels = cout;
  spec.groups = groups;
  spec.kernel = {s, s, s};
  spec.padding = {s / 2, s / 2, s / 2};
  return spec;
}

template <typename T>
Tensor<T> randn(Shape shape, SplitRng& rng) {
  Tensor<T> t(std::move(shape));
  for (i64 i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal());
  return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (i64 i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace

TEST_CASE("expert kernel initialization") {
  // 4 * 8 * 12 * 27 = 10368 samples: enough for the mean test.
  ConvSpec spec = make_spec(24, 8, 2, 3);
  TempSchedule sched;
  SUBCASE("deterministic given the seed") {
    SplitRng r1(77), r2(77);
    ExpertConv<double> a(spec, 4, true, 16, 2, 0.25, sched, r1);
    ExpertConv<double> b(spec, 4, true, 16, 2, 0.25, sched, r2);
    CHECK(std::memcmp(a.weight().data(), b.weight().data(),
                      sizeof(double) * static_cast<std::size_t>(a.weight().numel())) == 0);
  }
  SUBCASE("truncation bound and sample mean") {
    SplitRng rng(78);
    ExpertConv<double> e(spec, 4, true, 16, 2, 0.25, sched, rng);
    const double stddev = std::sqrt(2.0 / (12.0 * 27.0));
    double sum = 0.0;
    for (i64 i = 0; i < e.weight().numel(); ++i) {
      CHECK(std::fabs(e.weight()[i]) <= 2.0 * stddev + 1e-12);
      sum += e.weight()[i];
    }
    const double n = static_cast<double>(e.weight().numel());
    CHECK(n >= 1e4);
    // 3 standard errors of the (truncated) sampling distribution.
    CHECK(std::fabs(sum / n) <= 3.0 * stddev / std::sqrt(n));
    for (i64 i = 0; i < e.bias().numel(); ++i) CHECK(e.bias()[i] == 0.0);
  }
}

TEST_CASE("aggregate_kernels") {
  TempSchedule sched;
  SplitRng rng(79);
  ConvSpec spec = make_spec(4, 4, 2, 3);
  ExpertConv<double> e(spec, 3, true, 2, 1, 0.25, sched, rng);

  SUBCASE("one-hot alpha selects one expert exactly") {
    Tensor<double> alpha = Tensor<double>::zeros({2, 3});
    alpha[0 * 3 + 1] = 1.0;
    alpha[1 * 3 + 1] = 1.0;
    auto [w, b] = e.aggregate_kernels(nullptr, alpha);
    const i64 rest = e.weight().numel() / 3;
    for (i64 s = 0; s < 2; ++s)
      for (i64 i = 0; i < rest; ++i) CHECK(w[s * rest + i] == e.weight()[1 * rest + i]);
    for (i64 s = 0; s < 2; ++s)
      for (i64 c = 0; c < 4; ++c) CHECK(b[s * 4 + c] == e.bias()[1 * 4 + c]);
  }
  SUBCASE("K=1 reproduces the single kernel") {
    SplitRng r(80);
    ExpertConv<double> single(spec, 1, true, 2, 1, 0.25, sched, r);
    Tensor<double> alpha = Tensor<double>::full({3, 1}, 1.0);
    auto [w, b] = single.aggregate_kernels(nullptr, alpha);
    const i64 rest = single.weight().numel();
    for (i64 s = 0; s < 3; ++s)
      for (i64 i = 0; i < rest; ++i) CHECK(w[s * rest + i] == single.weight()[i]);
  }
  SUBCASE("random alpha matches the per-sample f64 loop") {
    Tensor<double> alpha = Tensor<double>::from({2, 3}, {0.2, 0.5, 0.3, 0.6, 0.1, 0.3});
    auto [w, b] = e.aggregate_kernels(nullptr, alpha);
    const i64 rest = e.weight().numel() / 3;
    for (i64 s = 0; s < 2; ++s)
      for (i64 i = 0; i < rest; ++i) {
        double acc = 0.0;
        for (i64 k = 0; k < 3; ++k) acc += alpha[s * 3 + k] * e.weight()[k * rest + i];
        CHECK(w[s * rest + i] == doctest::Approx(acc).epsilon(1e-14));
      }
  }
  SUBCASE("expert count mismatch is a shape error") {
    Tensor<double> alpha = Tensor<double>::zeros({2, 5});
    CHECK_THROWS_AS(e.aggregate_kernels(nullptr, alpha), ShapeError);
  }
}

TEST_CASE("single-sample batch equals a static convolution") {
  TempSchedule sched;
  SplitRng rng(81);
  ConvSpec spec = make_spec(4, 2, 2, 3);
  ExpertConv<double> e(spec, 4, true, 2, 1, 0.25, sched, rng);
  Tensor<double> x = randn<double>({1, 4, 3, 3, 3}, rng);
  Tensor<double> alpha = Tensor<double>::from({1, 4}, {0.4, 0.3, 0.2, 0.1});
  auto [w, b] = e.aggregate_kernels(nullptr, alpha);
  Tensor<double> want = conv3d_forward(x, w, &b, spec);
  Tensor<double> got = e.forward_with_alpha(nullptr, x, alpha);
  CHECK(max_abs_diff(got, want) == 0.0);
}

TEST_CASE("uniform attention reduces to the mean kernel for every sample") {
  TempSchedule sched;
  SplitRng rng(82);
  ConvSpec spec = make_spec(4, 4, 1, 3);
  ExpertConv<double> e(spec, 4, true, 2, 1, 0.25, sched, rng);
  Tensor<double> x = randn<double>({3, 4, 3, 3, 3}, rng);
  Tensor<double> alpha = Tensor<double>::full({3, 4}, 0.25);
  Tensor<double> got = e.forward_with_alpha(nullptr, x, alpha);

  const i64 rest = e.weight().numel() / 4;
  Tensor<double> mean_w({4, 4, 3, 3, 3});
  for (i64 i = 0; i < rest; ++i) {
    double acc = 0.0;
    for (i64 k = 0; k < 4; ++k) acc += 0.25 * e.weight()[k * rest + i];
    mean_w[i] = acc;
  }
  Tensor<double> mean_b({4});
  for (i64 c = 0; c < 4; ++c) {
    double acc = 0.0;
    for (i64 k = 0; k < 4; ++k) acc += 0.25 * e.bias()[k * 4 + c];
    mean_b[c] = acc;
  }
  Tensor<double> want = conv3d_forward(x, mean_w, &mean_b, spec);
  CHECK(max_abs_diff(got, want) <= 1e-12);
}

TEST_CASE("batch-merged forward matches the per-sample oracle") {
  TempSchedule sched;
  SplitRng rng(83);
  ConvSpec spec = make_spec(4, 4, 2, 3);
  ExpertConv<double> e(spec, 4, true, 2, 2, 0.25, sched, rng);
  Tensor<double> x = randn<double>({3, 4, 4, 4, 4}, rng);
  e.mapping().set_tau(2.0);
  Tensor<double> y = e.forward(nullptr, x, true);
  Tensor<double> alpha = e.last_alpha();
  Tensor<double> want =
      ExpertConv<double>::per_sample_oracle(x, alpha, e.weight(), &e.bias(), spec);
  CHECK(max_abs_diff(y, want) <= 1e-10);
}

TEST_CASE("oracle output is linear in alpha") {
  TempSchedule sched;
  SplitRng rng(84);
  ConvSpec spec = make_spec(2, 2, 1, 1);
  ExpertConv<double> e(spec, 3, true, 2, 1, 0.25, sched, rng);
  Tensor<double> x = randn<double>({2, 2, 2, 2, 2}, rng);
  Tensor<double> a1({2, 3}), a2({2, 3});
  for (i64 i = 0; i < 6; ++i) {
    a1[i] = rng.uniform(0.0, 1.0);
    a2[i] = rng.uniform(0.0, 1.0);
  }
  const double lam = 0.3;
  Tensor<double> mix({2, 3});
  for (i64 i = 0; i < 6; ++i) mix[i] = lam * a1[i] + (1.0 - lam) * a2[i];
  Tensor<double> y1 = e.forward_with_alpha(nullptr, x, a1);
  Tensor<double> y2 = e.forward_with_alpha(nullptr, x, a2);
  Tensor<double> ym = e.forward_with_alpha(nullptr, x, mix);
  double diff = 0.0;
  for (i64 i = 0; i < ym.numel(); ++i)
    diff = std::max(diff, std::fabs(ym[i] - (lam * y1[i] + (1.0 - lam) * y2[i])));
  CHECK(diff <= 1e-12);
}

TEST_CASE("permuting samples permutes outputs with no cross-talk") {
  TempSchedule sched;
  SplitRng rng(85);
  ConvSpec spec = make_spec(4, 4, 2, 3);
  ExpertConv<double> e(spec, 4, true, 2, 1, 0.25, sched, rng);
  Tensor<double> x = randn<double>({3, 4, 3, 3, 3}, rng);
  Tensor<double> alpha = randn<double>({3, 4}, rng);
  for (i64 b = 0; b < 3; ++b) {
    double s = 0.0;
    for (i64 k = 0; k < 4; ++k) {
      alpha[b * 4 + k] = std::fabs(alpha[b * 4 + k]) + 0.1;
      s += alpha[b * 4 + k];
    }
    for (i64 k = 0; k < 4; ++k) alpha[b * 4 + k] /= s;
  }
  Tensor<double> y = e.forward_with_alpha(nullptr, x, alpha);

  const std::vector<i64> perm{2, 0, 1};
  const i64 xs = x.numel() / 3, as = 4, ys = y.numel() / 3;
  Tensor<double> xp({3, 4, 3, 3, 3}), ap({3, 4});
  for (i64 b = 0; b < 3; ++b) {
    std::copy_n(x.data() + perm[static_cast<std::size_t>(b)] * xs, xs, xp.data() + b * xs);
    std::copy_n(alpha.data() + perm[static_cast<std::size_t>(b)] * as, as,
                ap.data() + b * as);
  }
  Tensor<double> yp = e.forward_with_alpha(nullptr, xp, ap);
  for (i64 b = 0; b < 3; ++b)
    for (i64 i = 0; i < ys; ++i)
      CHECK(yp[b * ys + i] == y[perm[static_cast<std::size_t>(b)] * ys + i]);
}

TEST_CASE("two identical samples produce identical oracle slices") {
  TempSchedule sched;
  SplitRng rng(86);
  ConvSpec spec = make_spec(2, 2, 1, 3);
  ExpertConv<double> e(spec, 2, true, 2, 1, 0.25, sched, rng);
  Tensor<double> one = randn<double>({1, 2, 3, 3, 3}, rng);
  Tensor<double> x({2, 2, 3, 3, 3});
  std::copy_n(one.data(), one.numel(), x.data());
  std::copy_n(one.data(), one.numel(), x.data() + one.numel());
  Tensor<double> alpha = Tensor<double>::from({2, 2}, {0.7, 0.3, 0.7, 0.3});
  Tensor<double> y =
      ExpertConv<double>::per_sample_oracle(x, alpha, e.weight(), &e.bias(), spec);
  const i64 half = y.numel() / 2;
  for (i64 i = 0; i < half; ++i) CHECK(y[i] == y[half + i]);
}
