#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <utility>

#include "dgssm/common.hpp"

namespace dgssm {

template <typename T>
class Tape;

// Dense tensor handle. Copies are shallow: they share the value buffer and
// the gradient buffer. Values are immutable once an op has produced them;
// gradient buffers are mutated only by Tape::backward and optimizer steps.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  // The grad cell exists from birth (empty until first needed) and is shared
  // by every shallow copy, so allocating it later through one handle is seen
  // by all: op closures capture copies before the tape touches the output.
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(std::move(data))),
        grad_(std::make_shared<std::vector<T>>()),
        requires_grad_(requires_grad) {
    if (numel_of(shape_) != static_cast<long>(data_->size()))
      throw Error("tensor data length does not match shape " + shape_str(shape_));
    if (requires_grad_) ensure_grad();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const long n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<T>(static_cast<size_t>(n), T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const long n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<T>(static_cast<size_t>(n), value), requires_grad);
  }

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false) {
    const long n = numel_of(shape);
    std::vector<T> d(static_cast<size_t>(n));
    for (auto& x : d) x = static_cast<T>(rng.normal() * stddev);
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  long dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  long numel() const { return data_ ? static_cast<long>(data_->size()) : 0; }

  const std::vector<T>& data() const { return *data_; }
  std::vector<T>& mutable_data() { return *data_; }
  T at(long i) const { return (*data_)[static_cast<size_t>(i)]; }

  // Value of a single-element tensor.
  T value() const {
    if (numel() != 1) throw Error("value() requires a single-element tensor");
    return (*data_)[0];
  }

  // The gradient buffer is allocated the moment a tensor becomes a
  // differentiation target, so every shallow copy taken afterwards (op
  // closures in particular) accumulates into the same storage.
  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool b) {
    requires_grad_ = b;
    if (b) ensure_grad();
    return *this;
  }

  bool on_tape() const { return on_tape_; }
  std::uint64_t tape_id() const { return tape_id_; }
  bool needs_grad() const { return requires_grad_ || on_tape_; }

  bool has_grad() const { return grad_ && !grad_->empty(); }
  const std::vector<T>& grad() const {
    if (!has_grad()) throw Error("tensor has no gradient buffer");
    return *grad_;
  }
  std::vector<T>& mutable_grad() {
    ensure_grad();
    return *grad_;
  }

  void ensure_grad() {
    if (grad_->empty()) grad_->assign(data_->size(), T(0));
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }

  // Same values, detached from autodiff.
  Tensor detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    t.grad_ = std::make_shared<std::vector<T>>();
    return t;
  }

  // Shares values but owns a fresh zero gradient accumulator; used by worker
  // threads so per-sample backward passes never race on one buffer.
  Tensor with_fresh_grad() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    t.requires_grad_ = requires_grad_;
    t.grad_ = std::make_shared<std::vector<T>>(data_->size(), T(0));
    return t;
  }

  // Deep copy of values (used at construction time only).
  Tensor clone_values() const {
    return Tensor(shape_, *data_, requires_grad_);
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<std::vector<T>> grad_;
  bool requires_grad_ = false;
  bool on_tape_ = false;
  std::uint64_t tape_id_ = 0;

  friend class Tape<T>;
};

// Wengert list: ops are recorded in forward order, so the list is already
// topologically sorted; backward replays it once, in reverse. A tape is
// confined to one thread and consumed by a single backward() call.
template <typename T>
class Tape {
 public:
  Tape() : id_(next_id().fetch_add(1, std::memory_order_relaxed)) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return ops_.size(); }
  std::size_t executed() const { return executed_; }

  // Marks `out` as produced on this tape and stores its backward rule.
  // Inputs that participate in differentiation get grad buffers up front.
  void record(Tensor<T>& out, std::function<void()> backward_rule) {
    if (consumed_) throw Error("tape already consumed by backward()");
    out.on_tape_ = true;
    out.tape_id_ = id_;
    out.ensure_grad();
    ops_.push_back(std::move(backward_rule));
  }

  void backward(Tensor<T>& loss) {
    if (consumed_) throw Error("backward() called twice on the same tape");
    if (loss.numel() != 1) throw Error("backward() requires a scalar loss");
    if (!loss.on_tape() || loss.tape_id() != id_)
      throw Error("loss was not produced on this tape");
    consumed_ = true;
    loss.mutable_grad()[0] = T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      (*it)();
      ++executed_;
    }
    ops_.clear();
  }

 private:
  static std::atomic<std::uint64_t>& next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter;
  }

  std::uint64_t id_;
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
  std::size_t executed_ = 0;
};

// True when the op should be recorded; also validates tape affinity.
template <typename T>
bool tape_wants(Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
  bool any = false;
  for (const Tensor<T>* t : inputs) {
    if (t->on_tape()) {
      if (!tape || t->tape_id() != tape->id())
        throw Error("tensor was recorded on a different tape");
    }
    if (t->needs_grad()) any = true;
  }
  return tape != nullptr && any;
}

}  // namespace dgssm
