#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <unordered_set>
#include <vector>

#include "core/common.hpp"

namespace prnet {

struct Shape4 {
  int64_t n = 0, c = 0, h = 0, w = 0;

  int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape4& o) const { return !(*this == o); }

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

namespace detail {

template <class S>
struct Node {
  Shape4 shape;
  std::vector<S> data;
  std::vector<S> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backward_fn;  // reads this->grad

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
};

// Autograd on/off switch; inference paths disable graph construction.
bool& grad_enabled_flag();

}  // namespace detail

struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_enabled_flag()) {
    detail::grad_enabled_flag() = false;
  }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Rank-4 N×C×H×W tensor handle with an attached gradient slot. Copies are
// shallow (shared node); data is mutated only through explicit accessors.
template <class S>
class TensorT {
 public:
  using Scalar = S;

  TensorT() = default;

  static TensorT zeros(Shape4 shape, bool requires_grad = false) {
    return filled(shape, S(0), requires_grad);
  }

  static TensorT filled(Shape4 shape, S value, bool requires_grad = false) {
    TensorT t;
    t.node_ = std::make_shared<detail::Node<S>>();
    t.node_->shape = shape;
    t.node_->data.assign(static_cast<size_t>(shape.numel()), value);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static TensorT from_data(Shape4 shape, std::vector<S> data,
                           bool requires_grad = false) {
    if (static_cast<int64_t>(data.size()) != shape.numel())
      fail_contract("tensor: data length " + std::to_string(data.size()) +
                    " != numel of shape " + shape.str());
    TensorT t;
    t.node_ = std::make_shared<detail::Node<S>>();
    t.node_->shape = shape;
    t.node_->data = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static TensorT random_normal(Shape4 shape, Rng& rng, S scale,
                               bool requires_grad = false) {
    TensorT t = zeros(shape, requires_grad);
    for (auto& v : t.node_->data) v = static_cast<S>(rng.normal()) * scale;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape4& shape() const { return node_->shape; }
  int64_t numel() const { return node_->shape.numel(); }

  S* data() { return node_->data.data(); }
  const S* data() const { return node_->data.data(); }
  std::vector<S>& vec() { return node_->data; }
  const std::vector<S>& vec() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return !node_->grad.empty(); }
  S* grad() {
    node_->ensure_grad();
    return node_->grad.data();
  }
  const std::vector<S>& grad_vec() const { return node_->grad; }
  void zero_grad() {
    node_->grad.assign(node_->data.size(), S(0));
  }

  S at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return node_->data[static_cast<size_t>(offset(n, c, h, w))];
  }
  S& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return node_->data[static_cast<size_t>(offset(n, c, h, w))];
  }
  int64_t offset(int64_t n, int64_t c, int64_t h, int64_t w) const {
    const Shape4& s = node_->shape;
    return ((n * s.c + c) * s.h + h) * s.w + w;
  }

  // Deep copy of values; detached from any graph.
  TensorT clone_detached() const {
    return from_data(shape(), node_->data, false);
  }

  // Reverse-mode backprop from a scalar (numel == 1) tensor.
  void backward() const {
    if (numel() != 1)
      fail_invalid("backward: output must be scalar, got " + shape().str());
    if (!node_->requires_grad)
      fail_invalid("backward: tensor does not require grad");
    // Topological order over the parent DAG, iterative DFS.
    std::vector<detail::Node<S>*> order;
    std::vector<std::pair<detail::Node<S>*, size_t>> stack;
    std::unordered_set<detail::Node<S>*> seen;
    stack.push_back({node_.get(), 0});
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [nd, idx] = stack.back();
      if (idx < nd->parents.size()) {
        detail::Node<S>* p = nd->parents[idx++].get();
        if (p->requires_grad && seen.insert(p).second) {
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(nd);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
  }

  std::shared_ptr<detail::Node<S>> node() const { return node_; }

  // Internal: build a result node wired to its parents.
  static TensorT make_result(Shape4 shape, std::vector<S> data,
                             std::vector<TensorT> parents,
                             std::function<void(detail::Node<S>&)> backward) {
    TensorT t = from_data(shape, std::move(data), false);
    if (!grad_enabled()) return t;
    bool need = false;
    for (const auto& p : parents)
      if (p.defined() && p.requires_grad()) need = true;
    if (!need) return t;
    t.node_->requires_grad = true;
    for (const auto& p : parents)
      if (p.defined()) t.node_->parents.push_back(p.node_);
    t.node_->backward_fn = std::move(backward);
    return t;
  }

 private:
  std::shared_ptr<detail::Node<S>> node_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <class To, class From>
TensorT<To> cast_tensor(const TensorT<From>& t) {
  std::vector<To> data(t.vec().begin(), t.vec().end());
  return TensorT<To>::from_data(t.shape(), std::move(data));
}

}  // namespace prnet
