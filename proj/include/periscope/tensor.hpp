#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace periscope {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Node in a dynamically built reverse-mode autodiff graph. Data is double
/// precision, laid out row-major; 4-D tensors use NCHW. A tensor's payload is
/// written once by the op that creates it. Gradients are allocated and zeroed
/// by backward(), so parameters need no explicit zero_grad between steps.
class Tensor {
 public:
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;

  // Graph edges, populated only when gradients are required.
  std::vector<TensorPtr> parents;
  std::function<void()> backward_fn;

  static TensorPtr create(std::vector<int> shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data.assign(t->numel(), 0.0);
    t->requires_grad = requires_grad;
    return t;
  }

  static TensorPtr from_data(std::vector<int> shape, std::vector<double> values,
                             bool requires_grad = false) {
    auto t = create(std::move(shape), requires_grad);
    if (values.size() != t->data.size())
      throw std::invalid_argument("from_data: value count does not match shape");
    t->data = std::move(values);
    return t;
  }

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }

  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  /// Flat index for a 4-D NCHW tensor.
  int64_t idx4(int n, int c, int h, int w) const {
    return ((static_cast<int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w;
  }

  /// Reverse-mode sweep from a scalar. Topologically orders the graph,
  /// allocates/zeroes gradients for every node that requires them, seeds
  /// d(self)/d(self) = 1 and runs each node's backward function.
  void backward() {
    if (numel() != 1)
      throw std::invalid_argument("backward: tensor must be a scalar");
    if (!requires_grad)
      throw std::invalid_argument("backward: tensor does not require gradients");

    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> seen;
    // Iterative post-order DFS (graphs can be deep enough to overflow the
    // call stack at high resolutions).
    std::vector<std::pair<Tensor*, size_t>> stack{{this, 0}};
    seen.insert(this);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Tensor* p = node->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }

    for (Tensor* t : order) t->grad.assign(static_cast<size_t>(t->numel()), 0.0);
    grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward_fn) (*it)->backward_fn();
  }
};

namespace detail {

/// Creates the output node of an op, wiring graph edges only when some input
/// participates in differentiation.
inline TensorPtr make_node(std::vector<int> shape, std::initializer_list<TensorPtr> parents) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || (p && p->requires_grad);
  auto t = Tensor::create(std::move(shape), rg);
  if (rg)
    for (const auto& p : parents)
      if (p) t->parents.push_back(p);
  return t;
}

inline void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->shape != b->shape)
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops.
// ---------------------------------------------------------------------------

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  detail::check_same_shape(a, b, "add");
  auto out = detail::make_node(a->shape, {a, b});
  const int64_t n = a->numel();
  for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
  if (out->requires_grad) {
    Tensor* o = out.get();
    out->backward_fn = [a, b, o, n] {
      if (a->requires_grad)
        for (int64_t i = 0; i < n; ++i) a->grad[i] += o->grad[i];
      if (b->requires_grad)
        for (int64_t i = 0; i < n; ++i) b->grad[i] += o->grad[i];
    };
  }
  return out;
}

inline TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  detail::check_same_shape(a, b, "sub");
  auto out = detail::make_node(a->shape, {a, b});
  const int64_t n = a->numel();
  for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] - b->data[i];
  if (out->requires_grad) {
    Tensor* o = out.get();
    out->backward_fn = [a, b, o, n] {
      if (a->requires_grad)
        for (int64_t i = 0; i < n; ++i) a->grad[i] += o->grad[i];
      if (b->requires_grad)
        for (int64_t i = 0; i < n; ++i) b->grad[i] -= o->grad[i];
    };
  }
  return out;
}

inline TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  detail::check_same_shape(a, b, "mul");
  auto out = detail::make_node(a->shape, {a, b});
  const int64_t n = a->numel();
  for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i];
  if (out->requires_grad) {
    Tensor* o = out.get();
    out->backward_fn = [a, b, o, n] {
      if (a->requires_grad)
        for (int64_t i = 0; i < n; ++i) a->grad[i] += o->grad[i] * b->data[i];
      if (b->requires_grad)
        for (int64_t i = 0; i < n; ++i) b->grad[i] += o->grad[i] * a->data[i];
    };
  }
  return out;
}

inline TensorPtr scale(const TensorPtr& a, double s) {
  auto out = detail::make_node(a->shape, {a});
  const int64_t n = a->numel();
  for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] * s;
  if (out->requires_grad) {
    Tensor* o = out.get();
    out->backward_fn = [a, o, s, n] {
      for (int64_t i = 0; i < n; ++i) a->grad[i] += o->grad[i] * s;
    };
  }
  return out;
}

inline TensorPtr sum(const TensorPtr& a) {
  auto out = detail::make_node({1}, {a});
  double s = 0.0;
  const int64_t n = a->numel();
  for (int64_t i = 0; i < n; ++i) s += a->data[i];
  out->data[0] = s;
  if (out->requires_grad) {
    Tensor* o = out.get();
    out->backward_fn = [a, o, n] {
      const double g = o->grad[0];
      for (int64_t i = 0; i < n; ++i) a->grad[i] += g;
    };
  }
  return out;
}

inline TensorPtr mean(const TensorPtr& a) {
  auto out = detail::make_node({1}, {a});
  const int64_t n = a->numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a->data[i];
  out->data[0] = s / static_cast<double>(n);
  if (out->requires_grad) {
    Tensor* o = out.get();
    out->backward_fn = [a, o, n] {
      const double g = o->grad[0] / static_cast<double>(n);
      for (int64_t i = 0; i < n; ++i) a->grad[i] += g;
    };
  }
  return out;
}

inline TensorPtr relu(const TensorPtr& a) {
  auto out = detail::make_node(a->shape, {a});
  const int64_t n = a->numel();
  for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
  if (out->requires_grad) {
    Tensor* o = out.get();
    out->backward_fn = [a, o, n] {
      for (int64_t i = 0; i < n; ++i)
        if (a->data[i] > 0.0) a->grad[i] += o->grad[i];
    };
  }
  return out;
}

inline TensorPtr sigmoid(const TensorPtr& a) {
  auto out = detail::make_node(a->shape, {a});
  const int64_t n = a->numel();
  for (int64_t i = 0; i < n; ++i) {
    const double x = a->data[i];
    // Branch on sign for numerical stability at large |x|.
    out->data[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
  }
  if (out->requires_grad) {
    Tensor* o = out.get();
    out->backward_fn = [a, o, n] {
      for (int64_t i = 0; i < n; ++i) {
        const double y = o->data[i];
        a->grad[i] += o->grad[i] * y * (1.0 - y);
      }
    };
  }
  return out;
}

}  // namespace periscope
