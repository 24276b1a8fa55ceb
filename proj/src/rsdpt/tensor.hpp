#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rsdpt/common.hpp"

namespace rsdpt {

// Dense row-major 2D tensor with an optional gradient buffer. Vectors are
// 1xN, scalars 1x1. Float is the training dtype, double the gradient-check
// dtype.
template <typename T>
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;
  std::vector<T> g;  // empty until ensure_grad(); same shape as v afterwards
  bool needs_grad = false;
  std::string name;  // non-empty for named parameters

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }

  void ensure_grad() {
    if (g.size() != size()) g.assign(size(), T(0));
  }

  void zero_grad() {
    if (!g.empty()) std::fill(g.begin(), g.end(), T(0));
  }

  T item() const {
    if (size() != 1) throw data_error("item() requires a 1x1 tensor");
    return v[0];
  }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
TensorPtr<T> make_tensor(int rows, int cols, bool needs_grad = false) {
  auto t = std::make_shared<Tensor<T>>();
  t->rows = rows;
  t->cols = cols;
  t->v.assign(static_cast<std::size_t>(rows) * cols, T(0));
  t->needs_grad = needs_grad;
  if (needs_grad) t->ensure_grad();
  return t;
}

template <typename T>
TensorPtr<T> make_scalar(T value) {
  auto t = make_tensor<T>(1, 1);
  t->v[0] = value;
  return t;
}

}  // namespace rsdpt
