#include <doctest.h>

#include <cmath>

#include "ekg/error.hpp"
#include "ekg/ops.hpp"
#include "ekg/tape.hpp"
#include "ekg/tensor.hpp"

using namespace ekg;

TEST_CASE("tensor shape and storage invariants") {
  Tensor<float> t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.rank() == 3);
  CHECK_THROWS_AS(Tensor<float>({2, 0, 4}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>::from({2, 2}, {1.0f, 2.0f, 3.0f}), ShapeError);
  CHECK_THROWS_AS(t.reshape({5, 5}), ShapeError);

  t.set_requires_grad(true);
  CHECK(t.has_grad());
  t.grad()[3] = 7.0f;
  Tensor<float> v = t.reshape({4, 6});
  CHECK(v.same_storage(t));
  CHECK(v.grad()[3] == 7.0f);  // grad buffer shared through views
  CHECK(v.requires_grad());

  Tensor<float> c = t.clone();
  CHECK(!c.same_storage(t));
  CHECK(!c.requires_grad());
  c[0] = 99.0f;
  CHECK(t[0] != 99.0f);
}

TEST_CASE("non-finite values are an error state") {
  Tensor<double> t({3});
  t[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(t.check_finite("test"), NumericError);
  t[1] = std::nan("");
  CHECK_THROWS_AS(t.check_finite("test"), NumericError);
  t[1] = 0.5;
  CHECK_NOTHROW(t.check_finite("test"));
}

TEST_CASE("gelu rejects non-finite input") {
  Tensor<double> t({2});
  t[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(gelu<double>(nullptr, t), NumericError);
}

TEST_CASE("tape replays each node exactly once, newest first") {
  Tape<double> tape;
  std::vector<int> order;
  for (int i = 0; i < 5; ++i)
    tape.record([&order, i]() { order.push_back(i); });
  CHECK(tape.size() == 5);
  Tensor<double> loss = Tensor<double>::scalar(1.0);
  tape.backward(loss);
  CHECK(order == std::vector<int>{4, 3, 2, 1, 0});
  CHECK(tape.empty());  // consumed
}

TEST_CASE("backward requires a scalar loss and a recorded graph") {
  Tape<double> tape;
  Tensor<double> not_scalar({2});
  CHECK_THROWS_AS(tape.backward(not_scalar), ShapeError);
  Tensor<double> scalar = Tensor<double>::scalar(1.0);
  CHECK_THROWS_AS(tape.backward(scalar), StateError);  // detached graph
}

TEST_CASE("loss = sum(x) gives unit gradients") {
  Tensor<double> x = Tensor<double>::from({2, 3}, {1, -2, 3, 4, -5, 6});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> loss = sum_all(&tape, x);
  tape.backward(loss);
  for (i64 i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 1.0);
}

TEST_CASE("loss = sum(x*x)/2 gives grad x") {
  Tensor<double> x = Tensor<double>::from({5}, {0.5, -1.5, 2.0, 0.0, -3.25});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> half = Tensor<double>::full({5}, 0.5);
  Tensor<double> loss = sum_all(&tape, mul(&tape, half, mul(&tape, x, x)));
  tape.backward(loss);
  for (i64 i = 0; i < 5; ++i) CHECK(x.grad()[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("gradient accumulation is additive across consumers") {
  Tensor<double> x = Tensor<double>::from({3}, {1.0, 2.0, 3.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  // x feeds two operations; its gradient is the sum of both contributions.
  Tensor<double> a = add(&tape, x, x);
  Tensor<double> loss = sum_all(&tape, a);
  tape.backward(loss);
  for (i64 i = 0; i < 3; ++i) CHECK(x.grad()[i] == 2.0);
}
