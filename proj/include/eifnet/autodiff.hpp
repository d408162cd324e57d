#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eifnet/error.hpp"
#include "eifnet/tensor.hpp"

namespace eifnet {

/// Initialization role of a parameter. Gradient checks use it to move every
/// parameter to a generic (non-degenerate) point.
enum class ParamKind { weight, bias, norm_scale, norm_shift, scalar };

/// Named learnable parameters with gradient accumulators. Iteration order is
/// sorted by name.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    Tensor<T> value;
    Tensor<T> grad;
    ParamKind kind = ParamKind::weight;
    bool trainable = true;
  };

  void add(const std::string& name, Tensor<T> value, ParamKind kind, bool trainable = true) {
    if (entries_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    Tensor<T> grad(value.shape());
    entries_.emplace(name, Entry{std::move(value), std::move(grad), kind, trainable});
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Entry& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Entry& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  Tensor<T>& value(const std::string& name) { return at(name).value; }
  const Tensor<T>& value(const std::string& name) const { return at(name).value; }

  /// Replaces a parameter value; the new value must keep the declared shape.
  void set(const std::string& name, Tensor<T> value) {
    Entry& e = at(name);
    if (value.shape() != e.value.shape()) {
      throw ShapeError("parameter " + name + " expects shape " + shape_str(e.value.shape()) +
                       ", got " + shape_str(value.shape()));
    }
    e.value = std::move(value);
  }

  void zero_grad() {
    for (auto& [name, e] : entries_) {
      for (auto& g : e.grad.data()) g = T{0};
    }
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) n += e.value.size();
    return n;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, e] : entries_) {
      out.add(name, e.value.template cast<U>(), e.kind, e.trainable);
    }
    return out;
  }

 private:
  std::map<std::string, Entry> entries_;
};

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
};

/// Append-only record of a forward computation. Backward walks the records in
/// exact reverse order. One tape serves one forward/backward pass.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  /// A constant or a differentiable input (requires_grad = true).
  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    check_finite(value, "leaf");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Leaf bound to a stored parameter; backward accumulates into its gradient.
  Var<T> param(ParamStore<T>& store, const std::string& name) {
    auto& entry = store.at(name);
    Node n;
    n.value = entry.value;
    n.requires_grad = entry.trainable && grad_enabled_;
    n.param_grad = n.requires_grad ? &entry.grad : nullptr;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Records an op output. `fn` runs only if some input requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    check_finite(value, "op");
    Node n;
    n.value = std::move(value);
    for (const auto& in : inputs) {
      if (in.tape != this) throw AutodiffError("input recorded on a different tape");
      n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  /// Adds `g` into the gradient of node `id` (ignored for constants).
  void accumulate(std::size_t id, const Tensor<T>& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape()) {
      throw AutodiffError("gradient shape " + shape_str(g.shape()) + " does not match value " +
                          shape_str(n.value.shape()));
    }
    if (!n.grad) {
      n.grad = g;
      return;
    }
    auto dst = n.grad->data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  void backward(Var<T> output) {
    if (consumed_) throw AutodiffError("tape already consumed by a backward pass");
    if (output.tape != this) throw AutodiffError("output recorded on a different tape");
    const Tensor<T>& out = nodes_.at(output.id).value;
    if (out.size() != 1) {
      throw AutodiffError("backward requires a scalar output, got shape " + shape_str(out.shape()));
    }
    consumed_ = true;
    accumulate(output.id, Tensor<T>(out.shape(), T{1}));
    for (std::size_t id = output.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.grad) continue;
      if (n.backward) n.backward(*this, *n.grad);
      if (n.param_grad) {
        auto dst = n.param_grad->data();
        auto src = n.grad->data();
        const T scale = T{1} + static_cast<T>(fault_scale_);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
      }
    }
  }

  /// Gradient of a node after backward; zeros if nothing flowed into it.
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad ? *n.grad : Tensor<T>(n.value.shape());
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Test hook: parameter gradients are scaled by (1 + scale). Zero disables.
  void inject_fault(double scale) { fault_scale_ = scale; }

 private:
  struct Node {
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    BackwardFn backward;
    Tensor<T>* param_grad = nullptr;
    bool requires_grad = false;
  };

  static void check_finite(const Tensor<T>& t, const char* what) {
    if (!t.all_finite()) {
      throw NumericError(std::string("non-finite value produced by ") + what + " of shape " +
                         shape_str(t.shape()));
    }
  }

  std::deque<Node> nodes_;
  bool grad_enabled_;
  bool consumed_ = false;
  double fault_scale_ = 0.0;
};

/// Binds a tape to a parameter store for one forward pass.
template <typename T>
struct Context {
  using value_type = T;
  Tape<T>& tape;
  ParamStore<T>& params;

  Var<T> param(const std::string& name) { return tape.param(params, name); }
  Var<T> constant(Tensor<T> value) { return tape.leaf(std::move(value), false); }
};

}  // namespace eifnet
