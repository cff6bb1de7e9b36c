#pragma once

// Dense tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Every operation whose inputs
// require gradients records its output node together with a propagation rule;
// backward() linearizes the reachable nodes in creation order (which is a
// topological order) and replays the rules in reverse.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ntex/errors.hpp"

namespace ntex {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Fixed 64-byte alignment keeps vectorized reductions bit-reproducible
/// across allocations.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
class Tensor;

namespace detail {

inline std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;
  bool requires_grad = false;
  std::uint64_t sequence = next_sequence();
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads the output gradient and accumulates into the inputs' grad buffers.
  std::function<void(std::span<const T>)> propagate;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Buffer<T> data(shape_numel(shape), value);
    return from(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor from(Shape shape, Buffer<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_string(shape));
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from(Shape{1}, Buffer<T>{value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  /// Empty span when no gradient has been accumulated yet.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() const {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  /// Independent copy of the values without any graph history.
  Tensor detach_copy(bool requires_grad = false) const {
    return from(shape(), node_->data, requires_grad);
  }

  const std::string& op() const { return node_->op; }
  std::uint64_t sequence() const { return node_->sequence; }
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

  friend bool same_tensor(const Tensor& a, const Tensor& b) { return a.node_ == b.node_; }

  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

namespace detail {

// Builds the output tensor of an operation; records the propagation rule only
// when some input participates in differentiation.
template <typename T>
Tensor<T> record(std::string op, Shape shape, Buffer<T> data,
                 std::vector<Tensor<T>> inputs,
                 std::function<void(std::span<const T>)> propagate) {
  auto out = Tensor<T>::from(std::move(shape), std::move(data));
  const bool needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                      [](const Tensor<T>& t) { return t.requires_grad(); });
  auto& node = *out.node();
  node.op = std::move(op);
  if (needs_grad) {
    node.requires_grad = true;
    for (const auto& in : inputs) node.inputs.push_back(in.node());
    node.propagate = std::move(propagate);
  }
  return out;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                         std::to_string(rank) + ", got " + shape_string(t.shape()));
  }
}

}  // namespace detail

/// Ordered record of the operations reachable from a root tensor.
///
/// Entries appear in creation order, so every operation's inputs precede it.
template <typename T>
class ComputationTape {
 public:
  explicit ComputationTape(const Tensor<T>& root) {
    std::unordered_set<const detail::Node<T>*> seen;
    std::vector<detail::Node<T>*> stack{root.node().get()};
    while (!stack.empty()) {
      auto* node = stack.back();
      stack.pop_back();
      if (!node->requires_grad || !seen.insert(node).second) continue;
      nodes_.push_back(node);
      for (const auto& in : node->inputs) stack.push_back(in.get());
    }
    std::sort(nodes_.begin(), nodes_.end(),
              [](const auto* a, const auto* b) { return a->sequence < b->sequence; });
  }

  std::size_t size() const { return nodes_.size(); }
  const detail::Node<T>& operator[](std::size_t i) const { return *nodes_[i]; }

  /// Runs every gradient rule in reverse order; the root's grad must be seeded.
  void replay() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      auto* node = *it;
      if (!node->propagate) continue;
      node->ensure_grad();
      for (const auto& in : node->inputs) {
        if (in->requires_grad) in->ensure_grad();
      }
      node->propagate(node->grad);
    }
  }

  // Interior gradients restart from zero on every pass; leaves keep accumulating.
  void reset_interior_grads() {
    for (auto* node : nodes_) {
      if (node->propagate) node->grad.assign(node->data.size(), T(0));
    }
  }

 private:
  std::vector<detail::Node<T>*> nodes_;
};

/// Populates d(loss)/d(t) for every requires_grad tensor reachable from loss.
/// Leaf gradients accumulate; callers zero them explicitly between steps.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss is not connected to any tensor requiring grad");
  }
  ComputationTape<T> tape(loss);
  tape.reset_interior_grads();
  auto& root = *loss.node();
  root.ensure_grad();
  root.grad[0] += T(1);
  tape.replay();
}

// ---------------------------------------------------------------------------
// Elementwise and reduction operations.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Buffer<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return detail::record<T>("add", a.shape(), std::move(out), {a, b},
                           [a, b](std::span<const T> g) mutable {
                             if (a.requires_grad()) {
                               auto ga = a.mutable_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                             }
                             if (b.requires_grad()) {
                               auto gb = b.mutable_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                             }
                           });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Buffer<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return detail::record<T>("sub", a.shape(), std::move(out), {a, b},
                           [a, b](std::span<const T> g) mutable {
                             if (a.requires_grad()) {
                               auto ga = a.mutable_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                             }
                             if (b.requires_grad()) {
                               auto gb = b.mutable_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                             }
                           });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Buffer<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return detail::record<T>("mul", a.shape(), std::move(out), {a, b},
                           [a, b](std::span<const T> g) mutable {
                             if (a.requires_grad()) {
                               auto ga = a.mutable_grad();
                               auto y = b.data();
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                             }
                             if (b.requires_grad()) {
                               auto gb = b.mutable_grad();
                               auto x = a.data();
                               for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
                             }
                           });
}

/// Elementwise product with a constant factor array (no gradient to the factors).
template <typename T>
Tensor<T> mul_constant(const Tensor<T>& a, Buffer<T> factors) {
  if (factors.size() != a.numel()) {
    throw DimensionError("mul_constant: factor count " + std::to_string(factors.size()) +
                         " does not match " + shape_string(a.shape()));
  }
  Buffer<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factors[i];
  auto shared = std::make_shared<Buffer<T>>(std::move(factors));
  return detail::record<T>("mul_constant", a.shape(), std::move(out), {a},
                           [a, shared](std::span<const T> g) mutable {
                             auto ga = a.mutable_grad();
                             const auto& f = *shared;
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * f[i];
                           });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Buffer<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return detail::record<T>("scale", a.shape(), std::move(out), {a},
                           [a, factor](std::span<const T> g) mutable {
                             auto ga = a.mutable_grad();
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                           });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  auto x = a.data();
  T total = std::accumulate(x.begin(), x.end(), T(0));
  return detail::record<T>("sum", Shape{1}, {total}, {a},
                           [a](std::span<const T> g) mutable {
                             auto ga = a.mutable_grad();
                             for (auto& v : ga) v += g[0];
                           });
}

template <typename T>
Tensor<T> sum_squares(const Tensor<T>& a) {
  auto x = a.data();
  T total = T(0);
  for (T v : x) total += v * v;
  return detail::record<T>("sum_squares", Shape{1}, {total}, {a},
                           [a](std::span<const T> g) mutable {
                             auto ga = a.mutable_grad();
                             auto x = a.data();
                             for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += T(2) * x[i] * g[0];
                           });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  Buffer<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] >= T(0) ? x[i] : slope * x[i];
  return detail::record<T>("leaky_relu", a.shape(), std::move(out), {a},
                           [a, slope](std::span<const T> g) mutable {
                             auto ga = a.mutable_grad();
                             auto x = a.data();
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               ga[i] += x[i] >= T(0) ? g[i] : slope * g[i];
                             }
                           });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  Buffer<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  auto values = std::make_shared<Buffer<T>>(out);
  return detail::record<T>("tanh", a.shape(), std::move(out), {a},
                           [a, values](std::span<const T> g) mutable {
                             auto ga = a.mutable_grad();
                             const auto& y = *values;
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
                           });
}

/// Concatenates two CxHxW tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 3, "concat_channels", "first input");
  detail::require_rank(b, 3, "concat_channels", "second input");
  if (a.dim(1) != b.dim(1)) throw DimensionError("concat_channels: height mismatch");
  if (a.dim(2) != b.dim(2)) throw DimensionError("concat_channels: width mismatch");
  Buffer<T> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const std::size_t split = a.numel();
  return detail::record<T>("concat_channels", Shape{a.dim(0) + b.dim(0), a.dim(1), a.dim(2)},
                           std::move(out), {a, b},
                           [a, b, split](std::span<const T> g) mutable {
                             if (a.requires_grad()) {
                               auto ga = a.mutable_grad();
                               for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
                             }
                             if (b.requires_grad()) {
                               auto gb = b.mutable_grad();
                               for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[split + i];
                             }
                           });
}

/// Channels [begin, end) of a CxHxW tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  detail::require_rank(a, 3, "slice_channels", "input");
  if (begin >= end || end > a.dim(0)) {
    throw DimensionError("slice_channels: channel range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for " + shape_string(a.shape()));
  }
  const std::size_t plane = a.dim(1) * a.dim(2);
  auto x = a.data();
  Buffer<T> out(x.begin() + begin * plane, x.begin() + end * plane);
  return detail::record<T>("slice_channels", Shape{end - begin, a.dim(1), a.dim(2)},
                           std::move(out), {a},
                           [a, offset = begin * plane](std::span<const T> g) mutable {
                             auto ga = a.mutable_grad();
                             for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
                           });
}

}  // namespace ntex
