#pragma once

#include <functional>
#include <vector>

#include "rsdpt/tensor.hpp"

namespace rsdpt {

// Reverse-mode tape. Ops append their backward closures during the forward
// pass; backward() seeds the loss gradient and replays them in reverse.
// A null Tape* passed to ops means inference: nothing is recorded and no
// gradient buffers are allocated.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

  std::size_t size() const { return steps_.size(); }

  void backward(const TensorPtr<T>& loss) {
    if (steps_.empty()) throw data_error("backward without a recorded forward pass");
    if (loss->size() != 1) throw data_error("backward requires a scalar loss");
    loss->ensure_grad();
    loss->g[0] += T(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
  }

  void clear() { steps_.clear(); }

 private:
  std::vector<std::function<void()>> steps_;
};

}  // namespace rsdpt
