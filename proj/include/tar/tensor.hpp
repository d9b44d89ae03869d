#pragma once

#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <utility>

#include "tar/common.hpp"

namespace tar {

// Dense n-d value with an optional gradient buffer. Nodes are shared between
// the user-facing Tensor handles and the backward closures on the tape, so a
// value stays alive as long as anything may still differentiate through it.
template <class S>
struct TensorNode {
  Shape shape;
  std::vector<S> values;
  std::vector<S> grad;  // allocated lazily on first accumulation
  bool requires_grad = false;

  long numel() const { return static_cast<long>(values.size()); }

  std::vector<S>& ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), S(0));
    return grad;
  }
};

// Ordered record of backward closures for one forward evaluation.
// Define-by-run: ops append an entry when they see a differentiable input,
// backward() replays the entries in reverse.
template <class S>
class Tape {
 public:
  void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }
  size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  void replay_reverse() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> entries_;
};

template <class S>
inline Tape<S>*& active_tape() {
  thread_local Tape<S>* tape = nullptr;
  return tape;
}

template <class S>
inline bool recording() {
  return active_tape<S>() != nullptr;
}

// Binds a tape for the lifetime of the scope. Ops executed outside any scope
// run as pure inference.
template <class S>
class TapeScope {
 public:
  explicit TapeScope(Tape<S>& tape) : prev_(active_tape<S>()) { active_tape<S>() = &tape; }
  ~TapeScope() { active_tape<S>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<S>* prev_;
};

// Temporarily suspends recording (used for metric evaluation mid-training).
template <class S>
class NoGradScope {
 public:
  NoGradScope() : prev_(active_tape<S>()) { active_tape<S>() = nullptr; }
  ~NoGradScope() { active_tape<S>() = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<S>* prev_;
};

template <class S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, S fill = S(0))
      : node_(std::make_shared<TensorNode<S>>()) {
    node_->shape = std::move(shape);
    node_->values.assign(shape_numel(node_->shape), fill);
  }
  Tensor(Shape shape, std::vector<S> values) : node_(std::make_shared<TensorNode<S>>()) {
    if (shape_numel(shape) != static_cast<long>(values.size()))
      fail("tensor", "value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->values = std::move(values);
  }

  static Tensor scalar(S v) { return Tensor(Shape{1}, std::vector<S>{v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  long dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  long numel() const { return node_->numel(); }

  std::vector<S>& values() { return node_->values; }
  const std::vector<S>& values() const { return node_->values; }
  S* data() { return node_->values.data(); }
  const S* data() const { return node_->values.data(); }

  S value() const {
    if (numel() != 1) fail("tensor", "value() called on non-scalar " + shape_str(shape()));
    return node_->values[0];
  }
  S operator[](long i) const { return node_->values[static_cast<size_t>(i)]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  std::vector<S>& grad() { return node_->ensure_grad(); }
  const std::vector<S>& grad() const { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.assign(node_->values.size(), S(0)); }

  std::shared_ptr<TensorNode<S>> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<S>> node_;
};

// Seeds d(loss)/d(loss) = 1 and replays the tape. The loss must be scalar;
// gradients accumulate into every differentiable node reached by the graph,
// nodes not on a path to the loss keep whatever was there (zeros after
// zero_grad).
template <class S>
void backward(const Tensor<S>& loss, Tape<S>& tape) {
  if (loss.numel() != 1)
    fail("backward", "loss must be scalar, got " + shape_str(loss.shape()));
  loss.node()->ensure_grad()[0] += S(1);
  tape.replay_reverse();
}

namespace detail {

// Every op funnels its result through here; finite checks are on by default
// so a NaN/Inf is reported at the op that produced it instead of corrupting
// downstream state.
inline bool& finite_checks_flag() {
  static bool enabled = true;
  return enabled;
}

}  // namespace detail

inline void set_finite_checks(bool enabled) { detail::finite_checks_flag() = enabled; }

template <class S>
void check_finite(const std::vector<S>& v, const char* op) {
  if (!detail::finite_checks_flag()) return;
  for (const S& x : v)
    if (!std::isfinite(static_cast<double>(x)))
      fail(op, "produced a non-finite value");
}

}  // namespace tar
