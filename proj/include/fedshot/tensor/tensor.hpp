#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "fedshot/errors.hpp"

namespace fedshot {

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline uint64_t next_seq() {
  static std::atomic<uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
inline bool& finite_checks_flag() {
  static bool enabled = false;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Scoped tape suppression for evaluation passes.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Debug hook: when on, every op output is scanned and NaN/Inf raises NonFiniteValue.
inline void set_finite_checks(bool on) { detail::finite_checks_flag() = on; }
inline bool finite_checks_enabled() { return detail::finite_checks_flag(); }

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first accumulation, kept until zeroed
  bool requires_grad = false;
  bool is_leaf = true;
  uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape s) {
    auto n = std::make_shared<Node<T>>();
    n->value.assign(static_cast<size_t>(numel_of(s)), T(0));
    n->shape = std::move(s);
    n->seq = detail::next_seq();
    return Tensor(std::move(n));
  }

  static Tensor full(Shape s, T v) {
    Tensor t = zeros(std::move(s));
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor from_vector(Shape s, std::vector<T> data) {
    if (numel_of(s) != static_cast<int64_t>(data.size()))
      throw ShapeMismatch("from_vector: shape " + shape_str(s) + " does not hold " +
                          std::to_string(data.size()) + " values");
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(s);
    n->value = std::move(data);
    n->seq = detail::next_seq();
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v) { return from_vector({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

  const std::vector<T>& data() const { return node_->value; }
  std::vector<T>& raw_data() { return node_->value; }

  T item() const {
    if (numel() != 1) throw NotScalar("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
  }

  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<T>& grad() const {
    if (node_->grad.empty())
      throw MissingGrad("grad: no gradient has been accumulated for this tensor");
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  // Reverse pass from a scalar. Leaf grads accumulate until zeroed.
  void backward() const {
    if (numel() != 1)
      throw NotScalar("backward: loss must be scalar, got shape " + shape_str(shape()));
    Node<T>* root = node_.get();
    if (!root->backward_fn && !root->requires_grad)
      throw DetachedGraph("backward: loss was not produced on an active tape");

    // Creation order is a topological order, so descending seq is a valid
    // reverse sweep.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<Node<T>*> stack{root};
    seen.insert(root);
    while (!stack.empty()) {
      Node<T>* n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (auto& p : n->parents) {
        if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
      }
    }
    std::sort(order.begin(), order.end(),
              [](Node<T>* a, Node<T>* b) { return a->seq > b->seq; });

    root->ensure_grad();
    root->grad[0] += T(1);
    for (Node<T>* n : order) {
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
  }

  std::shared_ptr<Node<T>> node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

// Assemble an op result; the tape entry is recorded only when grad mode is on
// and some input needs gradients.
template <typename T>
Tensor<T> make_op_node(const char* op, Shape shape, std::vector<T> value,
                       std::vector<std::shared_ptr<Node<T>>> parents,
                       std::function<void(Node<T>&)> backward) {
  if (finite_checks_flag()) {
    for (T v : value) {
      if (!std::isfinite(static_cast<double>(v)))
        throw NonFiniteValue(std::string(op) + ": non-finite value in output");
    }
  }
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->seq = next_seq();
  n->is_leaf = false;
  bool track = grad_mode_flag();
  if (track) {
    bool any = false;
    for (auto& p : parents) any = any || p->requires_grad;
    track = any;
  }
  if (track) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

}  // namespace detail

}  // namespace fedshot
