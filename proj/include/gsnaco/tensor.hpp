#pragma once

// Dense row-major tensor with reverse-mode automatic differentiation.
//
// A BasicTensor is a cheap handle onto a shared Node. Operations in ops.hpp
// create new nodes that remember their parents and an adjoint closure; calling
// backward() on a scalar replays those closures in reverse execution order.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace gsnaco {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

inline std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

// Test hook: when set, the adjoint flowing into nodes produced by the named
// operation is scaled by (1 + 1e-3) during backward. Used as a negative
// control for gradient checking.
inline std::string& corrupted_adjoint_op() {
  static std::string name;
  return name;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph recording for the lifetime of the guard (per thread).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until backward touches the node
  bool requires_grad = false;
  std::uint64_t seq = detail::next_sequence();
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates this node's grad into the parents' grads.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  BasicTensor() = default;
  explicit BasicTensor(NodePtr n) : node_(std::move(n)) {}

  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (numel_of(shape) != values.size()) {
      throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                       std::to_string(numel_of(shape)) + " values but " +
                       std::to_string(values.size()) + " were given");
    }
    node_ = std::make_shared<Node<T>>();
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel_of(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = numel_of(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }
  static BasicTensor scalar(T value, bool requires_grad = false) {
    return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<T> grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<const T> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

  /// A fresh leaf holding a copy of the values, detached from any graph.
  BasicTensor detach() const { return BasicTensor(shape(), node_->data, false); }

  Node<T>& node() const { return *node_; }
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

/// Ordered record of the operations reachable from a loss, in reverse
/// execution order. Each node appears exactly once.
template <class T>
class GradTape {
 public:
  static GradTape record(const BasicTensor<T>& root) {
    GradTape tape;
    std::vector<Node<T>*> stack{&root.node()};
    std::unordered_set<Node<T>*> seen{&root.node()};
    while (!stack.empty()) {
      Node<T>* n = stack.back();
      stack.pop_back();
      tape.nodes_.push_back(n);
      for (const auto& p : n->parents) {
        if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
      }
    }
    std::sort(tape.nodes_.begin(), tape.nodes_.end(),
              [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });
    return tape;
  }

  const std::vector<Node<T>*>& nodes() const { return nodes_; }

  void replay() const {
    const std::string& corrupt = detail::corrupted_adjoint_op();
    for (Node<T>* n : nodes_) {
      if (!n->backward_fn) continue;
      if (!corrupt.empty() && corrupt == n->op) {
        for (auto& g : n->grad) g *= T(1.001);
      }
      n->backward_fn(*n);
    }
  }

 private:
  std::vector<Node<T>*> nodes_;
};

/// Accumulates d(loss)/d(t) into every reachable tensor that requires grad.
template <class T>
void backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward: loss does not depend on any tensor that requires grad");
  }
  auto tape = GradTape<T>::record(loss);
  for (Node<T>* n : tape.nodes()) n->ensure_grad();
  loss.node().grad[0] += T(1);
  tape.replay();
}

namespace detail {

/// Builds the result node of an operation. Records parents only when the
/// graph is being recorded and some parent needs a gradient.
template <class T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                           std::initializer_list<BasicTensor<T>> inputs,
                           std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    for (const auto& in : inputs) n->parents.push_back(in.node_ptr());
    n->backward_fn = std::move(backward_fn);
  }
  return BasicTensor<T>(std::move(n));
}

template <class T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                           const std::vector<BasicTensor<T>>& inputs,
                           std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    for (const auto& in : inputs) n->parents.push_back(in.node_ptr());
    n->backward_fn = std::move(backward_fn);
  }
  return BasicTensor<T>(std::move(n));
}

// Parent gradient buffer, or nullptr when the parent takes no gradient.
template <class T>
T* grad_of(Node<T>& self, std::size_t parent) {
  Node<T>& p = *self.parents[parent];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

}  // namespace detail
}  // namespace gsnaco
