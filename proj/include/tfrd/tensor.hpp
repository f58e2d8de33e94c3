#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tfrd/error.hpp"

namespace tfrd {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct AllocationState {
  std::size_t largest = 0;
};

inline AllocationState& allocation_state() {
  thread_local AllocationState state;
  return state;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

inline std::string& injected_fault() {
  thread_local std::string op;
  return op;
}

inline std::uint64_t next_node_id() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

inline void note_allocation(std::size_t n) {
  auto& state = allocation_state();
  state.largest = std::max(state.largest, n);
}

}  // namespace detail

/// 64-byte aligned allocation. Eigen's vectorized loops choose their peeling
/// from the operand address, so unaligned storage makes products round
/// differently between identical runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

namespace detail {

// Every numeric buffer the library creates goes through here so that
// AllocationProbe sees it.
template <typename T>
Buffer<T> buffer(std::size_t n, T fill = T(0)) {
  note_allocation(n);
  return Buffer<T>(n, fill);
}

}  // namespace detail

/// Records the largest single buffer (in elements) allocated on this thread
/// while the probe is alive. Probes nest.
class AllocationProbe {
 public:
  AllocationProbe() : saved_(detail::allocation_state().largest) {
    detail::allocation_state().largest = 0;
  }
  ~AllocationProbe() {
    auto& state = detail::allocation_state();
    state.largest = std::max(state.largest, saved_);
  }
  AllocationProbe(const AllocationProbe&) = delete;
  AllocationProbe& operator=(const AllocationProbe&) = delete;

  std::size_t largest() const { return detail::allocation_state().largest; }

 private:
  std::size_t saved_;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Makes the backward rule of the named op emit negated gradients ("softmax"
/// also matches "softmax_row" and "softmax_col"). Used by the
/// gradcheck harness to prove that it detects broken rules.
class FaultInjection {
 public:
  explicit FaultInjection(std::string op) : previous_(detail::injected_fault()) {
    detail::injected_fault() = std::move(op);
  }
  ~FaultInjection() { detail::injected_fault() = previous_; }
  FaultInjection(const FaultInjection&) = delete;
  FaultInjection& operator=(const FaultInjection&) = delete;

 private:
  std::string previous_;
};

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  std::uint64_t id = detail::next_node_id();

  bool is_leaf() const { return inputs.empty(); }

  Buffer<T>& ensure_grad() {
    if (grad.empty()) grad = detail::buffer<T>(value.size());
    return grad;
  }
};

/// Dense row-major tensor handle. Copies share storage; use clone() for a
/// deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T fill, bool requires_grad = false) {
    validate(shape);
    auto node = std::make_shared<Node<T>>();
    node->value = detail::buffer<T>(shape_numel(shape), fill);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    validate(shape);
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor of shape " + shape_string(shape) + " cannot hold " +
                       std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<Node<T>>();
    detail::note_allocation(values.size());
    node->value.assign(values.begin(), values.end());
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  template <typename Alloc>
    requires(!std::is_same_v<Alloc, std::allocator<T>>)
  static Tensor from(Shape shape, std::vector<T, Alloc> values, bool requires_grad = false) {
    return from(std::move(shape), std::vector<T>(values.begin(), values.end()), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  const Buffer<T>& values() const { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<T> grad() { return node_->ensure_grad(); }
  std::span<const T> grad() const { return node_->ensure_grad(); }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  T item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }
  T operator[](std::size_t i) const { return node_->value[i]; }

  std::string_view op() const { return node_->op; }
  std::uint64_t id() const { return node_->id; }
  const NodePtr& node() const { return node_; }

  /// Leaf copy with its own storage; gradient history is dropped.
  Tensor clone(bool requires_grad = false) const {
    return from(shape(), node_->value, requires_grad);
  }

 private:
  static void validate(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
    for (auto extent : shape) {
      if (extent == 0) throw ShapeError("tensor extents must be positive: " + shape_string(shape));
    }
  }

  NodePtr node_;
};

namespace detail {

// Builds the result node of a primitive. The backward closure is attached only
// when recording is enabled and some input needs a gradient.
template <typename T>
Tensor<T> make_result(std::string_view op, Shape shape, Buffer<T> value,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = grad_mode() &&
               std::any_of(inputs.begin(), inputs.end(), [](const auto& in) { return in->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

}  // namespace detail

/// Topologically ordered record of the primitives that produced a scalar.
template <typename T>
class Tape {
 public:
  explicit Tape(const Tensor<T>& root) {
    if (!root.defined()) throw UsageError("backward() on an undefined tensor");
    std::unordered_set<const Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    if (!root.requires_grad()) return;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node<T>* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  /// Inputs precede the ops that consume them.
  const std::vector<Node<T>*>& order() const { return order_; }

  std::size_t op_count() const {
    return std::count_if(order_.begin(), order_.end(), [](const Node<T>* n) { return !n->is_leaf(); });
  }

  void run_backward() {
    if (order_.empty()) return;
    for (auto* node : order_) {
      if (!node->is_leaf()) node->grad.clear();
    }
    auto& seed = order_.back()->ensure_grad();
    std::fill(seed.begin(), seed.end(), T(0));
    seed[0] = T(1);
    const std::string& fault = detail::injected_fault();
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node<T>* node = *it;
      if (node->is_leaf() || !node->backward) continue;
      node->ensure_grad();
      if (!fault.empty() && (node->op == fault || node->op.rfind(fault + "_", 0) == 0)) {
        run_negated(*node);
      } else {
        node->backward(*node);
      }
    }
  }

 private:
  static void run_negated(Node<T>& node) {
    std::vector<Buffer<T>> before;
    for (auto& in : node.inputs) before.push_back(in->ensure_grad());
    node.backward(node);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      auto& g = node.inputs[i]->grad;
      for (std::size_t j = 0; j < g.size(); ++j) g[j] = before[i][j] - (g[j] - before[i][j]);
    }
  }

  std::vector<Node<T>*> order_;
};

/// Accumulates d(loss)/d(leaf) into every leaf that requires a gradient.
/// Intermediate gradients are reset first, so repeated calls are reproducible.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " +
                     (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  Tape<T> tape(loss);
  tape.run_backward();
}

}  // namespace tfrd
