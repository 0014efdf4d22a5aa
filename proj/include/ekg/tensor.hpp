#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ekg/error.hpp"

namespace ekg {

using i64 = std::int64_t;
using Shape = std::vector<i64>;

inline i64 shape_numel(const Shape& s) {
  i64 n = 1;
  for (i64 e : s) {
    if (e <= 0) throw ShapeError("tensor extents must be positive");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major N-d array with an optional gradient buffer.
//
// Copies are shallow: tensors share storage, so reshape() yields a view
// whose gradient accumulates into the original buffer. Deep copies go
// through clone().
template <typename T>
class Tensor {
  struct Storage {
    std::vector<T> data;
    std::vector<T> grad;  // empty until ensure_grad()
    bool requires_grad = false;
  };

 public:
  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : storage_(std::make_shared<Storage>()), shape_(std::move(shape)) {
    storage_->data.assign(static_cast<std::size_t>(shape_numel(shape_)), T(0));
    storage_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    for (T& v : t.storage_->data) v = value;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    if (shape_numel(t.shape_) != static_cast<i64>(values.size()))
      throw ShapeError("value count does not match shape " + shape_str(t.shape_));
    t.storage_ = std::make_shared<Storage>();
    t.storage_->data = std::move(values);
    return t;
  }

  static Tensor scalar(T value) { return from({1}, {value}); }

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  i64 dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  i64 numel() const { return storage_ ? static_cast<i64>(storage_->data.size()) : 0; }

  T* data() { return storage_->data.data(); }
  const T* data() const { return storage_->data.data(); }
  std::vector<T>& vec() { return storage_->data; }
  const std::vector<T>& vec() const { return storage_->data; }

  T& operator[](i64 i) { return storage_->data[static_cast<std::size_t>(i)]; }
  const T& operator[](i64 i) const { return storage_->data[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return storage_ && storage_->requires_grad; }
  void set_requires_grad(bool b) {
    storage_->requires_grad = b;
    if (b) ensure_grad();
  }

  bool has_grad() const { return storage_ && !storage_->grad.empty(); }

  void ensure_grad() {
    if (storage_->grad.empty()) storage_->grad.assign(storage_->data.size(), T(0));
  }

  void zero_grad() {
    if (has_grad()) std::fill(storage_->grad.begin(), storage_->grad.end(), T(0));
  }

  T* grad() {
    ensure_grad();
    return storage_->grad.data();
  }
  const T* grad() const {
    if (!has_grad()) throw StateError("tensor has no gradient buffer");
    return storage_->grad.data();
  }

  // View with identical storage (data and grad) under a new shape.
  Tensor reshape(Shape new_shape) const {
    if (shape_numel(new_shape) != numel())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                       " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(new_shape);
    return t;
  }

  // Deep copy of the data; gradient buffer and flag are not carried over.
  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.storage_ = std::make_shared<Storage>();
    t.storage_->data = storage_->data;
    return t;
  }

  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

  void check_finite(const char* where) const {
    for (const T& v : storage_->data)
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError(std::string(where) + ": non-finite value in tensor " +
                           shape_str(shape_));
  }

 private:
  std::shared_ptr<Storage> storage_;
  Shape shape_;
};

template <typename T>
void require_rank(const Tensor<T>& t, int rank, const char* where) {
  if (t.rank() != rank)
    throw ShapeError(std::string(where) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_str(t.shape()));
}

}  // namespace ekg
