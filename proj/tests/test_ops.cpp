#include <doctest.h>

#include <cmath>

#include "ekg/error.hpp"
#include "ekg/kernels/kernels.hpp"
#include "ekg/ops.hpp"
#include "ekg/rng.hpp"
#include "ekg/verify.hpp"

using namespace ekg;

namespace {

template <typename T>
Tensor<T> randn(Shape shape, SplitRng& rng, bool grad = false) {
  Tensor<T> t(std::move(shape));
  for (i64 i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal());
  if (grad) t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST_CASE("gelu scalar oracle values") {
  Tensor<double> x = Tensor<double>::from({3}, {0.0, 1.0, 10.0});
  Tensor<double> y = gelu<double>(nullptr, x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == doctest::Approx(0.84134474606854294859).epsilon(1e-12));
  CHECK(std::fabs(y[2] - 10.0) <= 1e-6);
}

TEST_CASE("batch_norm centers and scales") {
  SplitRng rng(11);
  SUBCASE("constant input becomes zero") {
    Tensor<double> x = Tensor<double>::full({2, 3, 2, 2, 2}, 4.25);
    BatchNorm<double> bn(3);
    Tensor<double> y = batch_norm<double>(nullptr, x, bn, true);
    for (i64 i = 0; i < y.numel(); ++i) CHECK(std::fabs(y[i]) <= 1e-12);
  }
  SUBCASE("gamma=0 yields beta everywhere") {
    Tensor<double> x = randn<double>({2, 3, 2, 2, 2}, rng);
    BatchNorm<double> bn(3);
    for (i64 c = 0; c < 3; ++c) {
      bn.gamma[c] = 0.0;
      bn.beta[c] = 0.5 + static_cast<double>(c);
    }
    Tensor<double> y = batch_norm<double>(nullptr, x, bn, true);
    for (i64 n = 0; n < 2; ++n)
      for (i64 c = 0; c < 3; ++c)
        for (i64 i = 0; i < 8; ++i)
          CHECK(y[(n * 3 + c) * 8 + i] == doctest::Approx(bn.beta[c]).epsilon(1e-15));
  }
  SUBCASE("normalized moments match an independent recomputation") {
    Tensor<double> x = randn<double>({2, 4, 3, 3, 3}, rng);
    BatchNorm<double> bn(4);
    Tensor<double> y = batch_norm<double>(nullptr, x, bn, true);
    const i64 inner = 27;
    for (i64 c = 0; c < 4; ++c) {
      double s = 0.0, sq = 0.0;
      for (i64 n = 0; n < 2; ++n)
        for (i64 i = 0; i < inner; ++i) {
          const double v = y[(n * 4 + c) * inner + i];
          s += v;
          sq += v * v;
        }
      const double mean = s / 54.0;
      const double var = sq / 54.0 - mean * mean;
      CHECK(std::fabs(mean) <= 1e-5);
      CHECK(std::fabs(var - 1.0) <= 1e-4);  // eps 1e-5 shifts variance slightly
    }
  }
  SUBCASE("eval mode uses running stats") {
    Tensor<double> x = randn<double>({3, 2, 1, 1, 2}, rng);
    BatchNorm<double> bn(2);
    bn.running_mean[0] = 1.0;
    bn.running_var[0] = 4.0;
    Tensor<double> y = batch_norm<double>(nullptr, x, bn, false);
    const double want = (x[0] - 1.0) / std::sqrt(4.0 + 1e-5);
    CHECK(y[0] == doctest::Approx(want).epsilon(1e-12));
  }
  SUBCASE("channel mismatch is a shape error") {
    Tensor<double> x = randn<double>({2, 3, 2, 2, 2}, rng);
    BatchNorm<double> bn(4);
    CHECK_THROWS_AS(batch_norm<double>(nullptr, x, bn, true), ShapeError);
  }
  SUBCASE("running stats update with momentum 0.1") {
    Tensor<double> x = Tensor<double>::full({1, 1, 1, 1, 4}, 2.0);
    x[0] = 6.0;  // mean 3, biased var 3, unbiased 4
    BatchNorm<double> bn(1);
    batch_norm<double>(nullptr, x, bn, true);
    CHECK(bn.running_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 3.0).epsilon(1e-12));
    CHECK(bn.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 4.0).epsilon(1e-12));
  }
}

TEST_CASE("softmax_with_temperature oracles and errors") {
  SUBCASE("equal logits give uniform weights") {
    Tensor<double> z = Tensor<double>::full({1, 5}, 3.7);
    Tensor<double> s = softmax_with_temperature<double>(nullptr, z, 2.0, 1);
    for (i64 i = 0; i < 5; ++i) CHECK(s[i] == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("very large temperature flattens") {
    Tensor<double> z = Tensor<double>::from({1, 2}, {1.0, 0.0});
    Tensor<double> s = softmax_with_temperature<double>(nullptr, z, 1e6, 1);
    CHECK(std::fabs(s[0] - 0.5) <= 1e-5);
    CHECK(std::fabs(s[1] - 0.5) <= 1e-5);
  }
  SUBCASE("frozen exp-normalize values") {
    Tensor<double> z = Tensor<double>::from({1, 3}, {2.0, 1.0, 0.0});
    Tensor<double> s = softmax_with_temperature<double>(nullptr, z, 1.0, 1);
    CHECK(s[0] == doctest::Approx(0.66524095577482188953).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(0.24472847105479765247).epsilon(1e-12));
    CHECK(s[2] == doctest::Approx(0.090030573170380457998).epsilon(1e-12));
    Tensor<double> z2 = Tensor<double>::from({1, 3}, {1.0, 2.0, 3.0});
    Tensor<double> s2 = softmax_with_temperature<double>(nullptr, z2, 2.0, 1);
    CHECK(s2[0] == doctest::Approx(0.18632372322584757702).epsilon(1e-12));
    CHECK(s2[1] == doctest::Approx(0.30719588571849839707).epsilon(1e-12));
    CHECK(s2[2] == doctest::Approx(0.5064803910556540259).epsilon(1e-12));
  }
  SUBCASE("non-positive temperature is rejected") {
    Tensor<double> z = Tensor<double>::from({1, 2}, {1.0, 0.0});
    CHECK_THROWS_AS(softmax_with_temperature<double>(nullptr, z, 0.0, 1), ParamError);
    CHECK_THROWS_AS(softmax_with_temperature<double>(nullptr, z, -1.0, 1), ParamError);
  }
  SUBCASE("works along a middle axis") {
    Tensor<double> z = Tensor<double>::from({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor<double> s = softmax_with_temperature<double>(nullptr, z, 1.0, 1);
    // axis-1 slices pair indices (0,2), (1,3), (4,6), (5,7)
    CHECK(s[0] + s[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s[1] + s[3] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s[4] + s[6] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("adaptive_avg_pool3d_to_unit") {
  SplitRng rng(3);
  SUBCASE("all ones pools to one") {
    Tensor<double> x = Tensor<double>::full({2, 3, 2, 2, 2}, 1.0);
    Tensor<double> y = adaptive_avg_pool3d_to_unit<double>(nullptr, x);
    CHECK(y.shape() == Shape{2, 3, 1, 1, 1});
    for (i64 i = 0; i < y.numel(); ++i) CHECK(y[i] == 1.0);
  }
  SUBCASE("single spatial position is identity") {
    Tensor<double> x = randn<double>({2, 4, 1, 1, 1}, rng);
    Tensor<double> y = adaptive_avg_pool3d_to_unit<double>(nullptr, x);
    for (i64 i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("means match a loop oracle") {
    Tensor<double> x = randn<double>({1, 2, 2, 2, 2}, rng);
    Tensor<double> y = adaptive_avg_pool3d_to_unit<double>(nullptr, x);
    for (i64 c = 0; c < 2; ++c) {
      double s = 0.0;
      for (i64 i = 0; i < 8; ++i) s += x[c * 8 + i];
      CHECK(y[c] == doctest::Approx(s / 8.0).epsilon(1e-15));
    }
  }
  SUBCASE("rank mismatch is a shape error") {
    Tensor<double> x = randn<double>({2, 3, 4}, rng);
    CHECK_THROWS_AS(adaptive_avg_pool3d_to_unit<double>(nullptr, x), ShapeError);
  }
  SUBCASE("backward conserves gradient mass") {
    Tensor<double> x = randn<double>({2, 3, 3, 2, 2}, rng, true);
    Tensor<double> r = randn<double>({2, 3, 1, 1, 1}, rng);
    Tape<double> tape;
    Tensor<double> loss = sum_all(&tape, mul(&tape, adaptive_avg_pool3d_to_unit(&tape, x), r));
    tape.backward(loss);
    const double in_mass = kern::vsum(x.numel(), x.grad());
    const double out_mass = kern::vsum(r.numel(), r.data());
    CHECK(in_mass == doctest::Approx(out_mass).epsilon(1e-12));
  }
}

TEST_CASE("avg_pool3d_window") {
  SplitRng rng(9);
  SUBCASE("factor 1 is identity") {
    Tensor<double> x = randn<double>({1, 2, 3, 3, 3}, rng);
    Tensor<double> y = avg_pool3d_window<double>(nullptr, x, 1);
    CHECK(y.same_storage(x));
  }
  SUBCASE("constant input stays constant (edge windows included)") {
    Tensor<double> x = Tensor<double>::full({1, 1, 5, 5, 5}, 2.5);
    Tensor<double> y = avg_pool3d_window<double>(nullptr, x, 2);
    CHECK(y.shape() == Shape{1, 1, 3, 3, 3});
    for (i64 i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(2.5).epsilon(1e-15));
  }
  SUBCASE("ramp input matches the window-mean loop oracle") {
    Tensor<double> x({1, 1, 4, 4, 4});
    for (i64 i = 0; i < 64; ++i) x[i] = static_cast<double>(i);
    Tensor<double> y = avg_pool3d_window<double>(nullptr, x, 2);
    for (i64 od = 0; od < 2; ++od)
      for (i64 oh = 0; oh < 2; ++oh)
        for (i64 ow = 0; ow < 2; ++ow) {
          double s = 0.0;
          for (i64 d = 0; d < 2; ++d)
            for (i64 h = 0; h < 2; ++h)
              for (i64 w = 0; w < 2; ++w)
                s += x[((2 * od + d) * 4 + (2 * oh + h)) * 4 + (2 * ow + w)];
          CHECK(y[(od * 2 + oh) * 2 + ow] == doctest::Approx(s / 8.0).epsilon(1e-15));
        }
  }
  SUBCASE("factor below one is rejected") {
    Tensor<double> x = randn<double>({1, 1, 2, 2, 2}, rng);
    CHECK_THROWS_AS(avg_pool3d_window<double>(nullptr, x, 0), ParamError);
  }
}

TEST_CASE("matmul and linear against hand computation") {
  Tensor<double> a = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> b = Tensor<double>::from({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor<double> c = matmul<double>(nullptr, a, b);
  CHECK(c[0] == 58.0);
  CHECK(c[1] == 64.0);
  CHECK(c[2] == 139.0);
  CHECK(c[3] == 154.0);

  Tensor<double> w = Tensor<double>::from({2, 3}, {1, 0, -1, 2, 1, 0});
  Tensor<double> bias = Tensor<double>::from({2}, {0.5, -0.5});
  Tensor<double> y = linear<double>(nullptr, a, w, &bias);
  CHECK(y[0] == doctest::Approx(1 * 1 + 2 * 0 + 3 * -1 + 0.5));
  CHECK(y[1] == doctest::Approx(1 * 2 + 2 * 1 + 3 * 0 - 0.5));

  CHECK_THROWS_AS(matmul<double>(nullptr, a, a), ShapeError);
}

TEST_CASE("concat_channels layout and backward split") {
  Tensor<double> a = Tensor<double>::from({2, 1, 2}, {1, 2, 3, 4});
  Tensor<double> b = Tensor<double>::from({2, 2, 2}, {5, 6, 7, 8, 9, 10, 11, 12});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> y = concat_channels(&tape, {a, b});
  CHECK(y.shape() == Shape{2, 3, 2});
  // sample 0: [1 2 | 5 6 7 8], sample 1: [3 4 | 9 10 11 12]
  CHECK(y[0] == 1.0);
  CHECK(y[2] == 5.0);
  CHECK(y[6] == 3.0);
  CHECK(y[8] == 9.0);
  Tensor<double> loss = sum_all(&tape, y);
  tape.backward(loss);
  for (i64 i = 0; i < a.numel(); ++i) CHECK(a.grad()[i] == 1.0);
  for (i64 i = 0; i < b.numel(); ++i) CHECK(b.grad()[i] == 1.0);
}

TEST_CASE("scalar_scale gradient reaches the gate") {
  SplitRng rng(21);
  Tensor<double> x = randn<double>({4}, rng, true);
  Tensor<double> s = Tensor<double>::full({1}, 0.25);
  s.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> loss = sum_all(&tape, scalar_scale(&tape, x, s));
  tape.backward(loss);
  double sum_x = 0.0;
  for (i64 i = 0; i < 4; ++i) {
    CHECK(x.grad()[i] == doctest::Approx(0.25).epsilon(1e-15));
    sum_x += x[i];
  }
  CHECK(s.grad()[0] == doctest::Approx(sum_x).epsilon(1e-12));
}

TEST_CASE("gradcheck machinery rejects a sign-flipped backward") {
  // Negative control: a deliberately corrupted analytic gradient must fail.
  SplitRng rng(31);
  Tensor<double> x = randn<double>({6}, rng, true);
  Tape<double> tape;
  Tensor<double> loss = sum_all(&tape, mul(&tape, x, x));
  tape.backward(loss);
  std::vector<double> good(x.grad(), x.grad() + 6);
  auto loss_fn = [&]() {
    Tensor<double> l = sum_all<double>(nullptr, mul<double>(nullptr, x, x));
    return l[0];
  };
  auto ok = check_gradient(loss_fn, x, good, 1e-4, 1e-4, 1e-7, 6, rng);
  CHECK(ok.pass);
  std::vector<double> flipped = good;
  for (auto& g : flipped) g = -g;
  auto bad = check_gradient(loss_fn, x, flipped, 1e-4, 1e-4, 1e-7, 6, rng);
  CHECK(!bad.pass);
}
