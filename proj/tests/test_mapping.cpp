#include <doctest.h>

#include <cmath>

#include "ekg/error.hpp"
#include "ekg/mapping.hpp"

using namespace ekg;

namespace {

template <typename T>
Tensor<T> randn(Shape shape, SplitRng& rng) {
  Tensor<T> t(std::move(shape));
  for (i64 i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal());
  return t;
}

// Independent scalar transcription of the mapping recurrence, reading the
// network's own parameters through collect().
std::vector<double> mapping_oracle(MappingNetwork<double>& net, const Tensor<double>& g) {
  std::vector<ParamEntry<double>> entries;
  net.collect("", entries);
  auto find = [&](const std::string& name) -> Tensor<double>& {
    for (auto& e : entries)
      if (e.name == name) return e.tensor;
    REQUIRE(false);
    return entries.front().tensor;
  };
  const i64 B = g.dim(0);
  const double eps = 1e-5;

  auto bn_gelu_linear = [&](std::vector<double> h, i64 width, i64 out_w,
                            const std::string& bn_prefix, const Tensor<double>& w,
                            const Tensor<double>& b, bool apply_gelu) {
    Tensor<double>& gamma = find(bn_prefix + ".gamma");
    Tensor<double>& beta = find(bn_prefix + ".beta");
    std::vector<double> u(h.size());
    for (i64 c = 0; c < width; ++c) {
      double mu = 0.0;
      for (i64 n = 0; n < B; ++n) mu += h[static_cast<std::size_t>(n * width + c)];
      mu /= static_cast<double>(B);
      double var = 0.0;
      for (i64 n = 0; n < B; ++n) {
        const double d = h[static_cast<std::size_t>(n * width + c)] - mu;
        var += d * d;
      }
      var /= static_cast<double>(B);
      for (i64 n = 0; n < B; ++n) {
        const double xhat =
            (h[static_cast<std::size_t>(n * width + c)] - mu) / std::sqrt(var + eps);
        u[static_cast<std::size_t>(n * width + c)] = gamma[c] * xhat + beta[c];
      }
    }
    if (apply_gelu)
      for (auto& v : u) v = v * 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
    std::vector<double> y(static_cast<std::size_t>(B * out_w));
    for (i64 n = 0; n < B; ++n)
      for (i64 o = 0; o < out_w; ++o) {
        double acc = b[o];
        for (i64 f = 0; f < width; ++f) acc += u[static_cast<std::size_t>(n * width + f)] * w[o * width + f];
        y[static_cast<std::size_t>(n * out_w + o)] = acc;
      }
    return y;
  };

  std::vector<double> h(g.data(), g.data() + g.numel());
  i64 width = g.dim(1);
  for (int i = 0; i < net.num_blocks(); ++i) {
    const std::string p = "block" + std::to_string(i);
    Tensor<double>& w = find(p + ".conv.weight");
    Tensor<double>& b = find(p + ".conv.bias");
    const i64 out_w = w.dim(0);
    std::vector<double> u = bn_gelu_linear(h, width, out_w, p + ".bn", w, b, true);
    const double gate = find(p + ".gate")[0];
    std::vector<double> skip;
    if (width != out_w) {
      Tensor<double>& pw = find(p + ".skip.weight");
      Tensor<double>& pb = find(p + ".skip.bias");
      skip.resize(static_cast<std::size_t>(B * out_w));
      for (i64 n = 0; n < B; ++n)
        for (i64 o = 0; o < out_w; ++o) {
          double acc = pb[o];
          for (i64 f = 0; f < width; ++f)
            acc += h[static_cast<std::size_t>(n * width + f)] * pw[o * width + f];
          skip[static_cast<std::size_t>(n * out_w + o)] = acc;
        }
    } else {
      skip = h;
    }
    std::vector<double> next(static_cast<std::size_t>(B * out_w));
    for (std::size_t j = 0; j < next.size(); ++j) next[j] = gate * u[j] + skip[j];
    h = next;
    width = out_w;
  }
  return bn_gelu_linear(h, width, net.num_experts(), "final_bn", find("proj.weight"),
                        find("proj.bias"), false);
}

}  // namespace

TEST_CASE("temperature schedule endpoints and midpoint") {
  TempSchedule s;  // 30 -> 1 over 10
  CHECK(s.tau_at(0) == doctest::Approx(30.0));
  CHECK(s.tau_at(5) == doctest::Approx(15.5).epsilon(1e-15));
  CHECK(s.tau_at(10) == doctest::Approx(1.0));
  CHECK(s.tau_at(1000) == doctest::Approx(1.0));  // clamps at the floor
  double prev = 1e9;
  for (int e = 0; e < 40; ++e) {
    const double t = s.tau_at(e);
    CHECK(t > 0.0);
    CHECK(t <= prev);
    prev = t;
  }
  CHECK_THROWS_AS(s.tau_at(-1), ParamError);
  TempSchedule bad;
  bad.tau_end = 0.0;
  CHECK_THROWS_AS(bad.validate(), ParamError);
}

TEST_CASE("update_temperature follows the schedule") {
  SplitRng rng(1);
  MappingNetwork<double> net(6, 4, 2, 2, 0.25, TempSchedule{}, rng);
  CHECK(net.tau() == doctest::Approx(30.0));
  net.update_temperature(5);
  CHECK(net.tau() == doctest::Approx(15.5));
  net.update_temperature(30);
  CHECK(net.tau() == doctest::Approx(1.0));
  CHECK_THROWS_AS(net.set_tau(0.0), ParamError);
}

TEST_CASE("annihilated network yields exactly uniform attention") {
  SplitRng rng(2);
  MappingNetwork<double> net(8, 4, 2, 2, 0.25, TempSchedule{}, rng);
  std::vector<ParamEntry<double>> entries;
  net.collect("", entries);
  for (auto& e : entries) {
    if (e.name.find("gate") != std::string::npos ||
        e.name == "proj.weight" || e.name == "proj.bias") {
      for (i64 i = 0; i < e.tensor.numel(); ++i) e.tensor[i] = 0.0;
    }
  }
  Tensor<double> x = randn<double>({3, 8, 2, 2, 2}, rng);
  Tensor<double> alpha = net.attention(nullptr, x, true);
  for (i64 i = 0; i < alpha.numel(); ++i) CHECK(alpha[i] == 0.25);
}

TEST_CASE("zero blocks degenerates to projection of normalized context") {
  SplitRng rng(3);
  MappingNetwork<double> net(5, 3, 0, 2, 0.25, TempSchedule{}, rng);
  Tensor<double> g = randn<double>({4, 5}, rng);
  Tensor<double> logits = net.forward_logits(nullptr, g, true);
  CHECK(logits.shape() == Shape{4, 3});
  const auto want = mapping_oracle(net, g);
  for (i64 i = 0; i < logits.numel(); ++i)
    CHECK(logits[i] == doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("forward matches the hand-rolled scalar oracle") {
  SplitRng rng(4);
  SUBCASE("B=1, C=4, K=4 (paper-scale example)") {
    MappingNetwork<double> net(4, 4, 2, 16, 0.25, TempSchedule{}, rng);
    Tensor<double> g = randn<double>({1, 4}, rng);
    Tensor<double> logits = net.forward_logits(nullptr, g, true);
    const auto want = mapping_oracle(net, g);
    for (i64 i = 0; i < logits.numel(); ++i)
      CHECK(logits[i] ==
            doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-12));
  }
  SUBCASE("wider batch with channel-changing first block") {
    MappingNetwork<double> net(6, 4, 2, 2, 0.25, TempSchedule{}, rng);
    CHECK(net.hidden_channels() == 4);  // max(6/2, 4)
    Tensor<double> g = randn<double>({3, 6}, rng);
    Tensor<double> logits = net.forward_logits(nullptr, g, true);
    const auto want = mapping_oracle(net, g);
    for (i64 i = 0; i < logits.numel(); ++i)
      CHECK(logits[i] ==
            doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-12));
  }
}

TEST_CASE("attention rows sum to one and stay positive") {
  SplitRng rng(5);
  MappingNetwork<double> net(8, 5, 2, 2, 0.25, TempSchedule{}, rng);
  Tensor<double> x = randn<double>({4, 8, 3, 2, 2}, rng);
  Tensor<double> alpha = net.attention(nullptr, x, true);
  for (i64 b = 0; b < 4; ++b) {
    double sum = 0.0;
    for (i64 k = 0; k < 5; ++k) {
      const double a = alpha[b * 5 + k];
      CHECK(a > 0.0);
      CHECK(a < 1.0);
      sum += a;
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("attention argmax is invariant to temperature") {
  SplitRng rng(6);
  MappingNetwork<double> net(6, 4, 1, 2, 0.25, TempSchedule{}, rng);
  Tensor<double> x = randn<double>({3, 6, 2, 2, 2}, rng);
  std::vector<i64> base;
  net.set_tau(1.0);
  Tensor<double> a0 = net.attention(nullptr, x, false);
  for (i64 b = 0; b < 3; ++b) {
    i64 am = 0;
    for (i64 k = 1; k < 4; ++k)
      if (a0[b * 4 + k] > a0[b * 4 + am]) am = k;
    base.push_back(am);
  }
  for (double tau : {0.2, 3.0, 25.0}) {
    net.set_tau(tau);
    Tensor<double> a = net.attention(nullptr, x, false);
    for (i64 b = 0; b < 3; ++b) {
      i64 am = 0;
      for (i64 k = 1; k < 4; ++k)
        if (a[b * 4 + k] > a[b * 4 + am]) am = k;
      CHECK(am == base[static_cast<std::size_t>(b)]);
    }
  }
}

TEST_CASE("attention depends only on per-channel means") {
  SplitRng rng(7);
  MappingNetwork<double> net(4, 3, 2, 2, 0.25, TempSchedule{}, rng);
  // Integer-valued voxels, then a spatial permutation per channel: channel
  // sums (hence the pooled context) are bit-identical.
  Tensor<double> x1({2, 4, 2, 2, 2});
  for (i64 i = 0; i < x1.numel(); ++i)
    x1[i] = static_cast<double>(static_cast<i64>(rng.uniform_int(9)) - 4);
  Tensor<double> x2 = x1.clone();
  for (i64 bc = 0; bc < 8; ++bc) {
    double* p = x2.data() + bc * 8;
    std::reverse(p, p + 8);
  }
  Tensor<double> a1 = net.attention(nullptr, x1, false);
  Tensor<double> a2 = net.attention(nullptr, x2, false);
  for (i64 i = 0; i < a1.numel(); ++i) CHECK(a1[i] == a2[i]);
}

TEST_CASE("saturated logit dominates") {
  Tensor<double> attn = Tensor<double>::from({1, 3}, {20.0, 0.0, 0.0});
  Tensor<double> alpha = attention_weights<double>(nullptr, attn, 1.0);
  CHECK(alpha[0] >= 1.0 - 1e-8);
}

TEST_CASE("uninitialized mapping network is a state error") {
  MappingNetwork<double> net;
  Tensor<double> g({1, 4});
  CHECK_THROWS_AS(net.forward_logits(nullptr, g, true), StateError);
}
