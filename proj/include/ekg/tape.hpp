#pragma once

#include <functional>
#include <vector>

#include "ekg/tensor.hpp"

namespace ekg {

// Reverse-mode tape: one per forward pass. Operations push a backward
// closure as they execute; backward() replays them once, newest first,
// and leaves the tape empty. Gradient accumulation is additive, so a
// tensor consumed by several operations receives the sum of all
// contributions.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward) { nodes_.push_back(std::move(backward)); }

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and propagates through every recorded node.
  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
    if (nodes_.empty())
      throw StateError("backward: tape is empty (graph was not recorded on this tape)");
    loss.ensure_grad();
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

// True when the output of an op involving these inputs should itself be
// tracked on the tape.
template <typename T, typename... Ts>
bool any_requires_grad(const Tensor<T>& first, const Ts&... rest) {
  if (first.requires_grad()) return true;
  if constexpr (sizeof...(rest) > 0) return any_requires_grad(rest...);
  return false;
}

}  // namespace ekg
