#ifndef GRES2NET_TENSOR_HPP
#define GRES2NET_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gres2net/common.hpp"
#include "gres2net/rng.hpp"

namespace gres2net {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    GRES_CHECK_SHAPE(d > 0, "tensor extents must be positive, got ", d);
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense N-dimensional array handle with optional gradient storage. Copies
// share the underlying buffer; values are treated as immutable once the
// tensor participates in a live tape (gradient accumulation during backward
// is the one sanctioned mutation).
template <class S>
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<S> values, bool requires_grad = false)
      : shape_(std::move(shape)), payload_(std::make_shared<Payload>()) {
    GRES_CHECK_SHAPE(shape_numel(shape_) == static_cast<int64_t>(values.size()),
                     "tensor data length ", values.size(), " does not match shape ",
                     shape_str(shape_));
    payload_->values = std::move(values);
    payload_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<S>(static_cast<size_t>(n), S(0)),
                  requires_grad);
  }

  static Tensor full(Shape shape, S value, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<S>(static_cast<size_t>(n), value),
                  requires_grad);
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<S>{value}, requires_grad);
  }

  // Kaiming-uniform fill: U(-b, b) with b = sqrt(6 / fan_in).
  static Tensor kaiming_uniform(Shape shape, int64_t fan_in, Rng& rng,
                                bool requires_grad = true) {
    GRES_CHECK(fan_in > 0, "kaiming_uniform: fan_in must be positive");
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    auto n = shape_numel(shape);
    std::vector<S> v(static_cast<size_t>(n));
    for (auto& x : v) x = static_cast<S>(rng.uniform(-bound, bound));
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const { return payload_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(payload_->values.size()); }

  std::span<const S> data() const { return payload_->values; }
  // Mutation is only legal for tensors not recorded on a live tape
  // (parameter updates, buffer initialization).
  std::span<S> mutable_data() { return payload_->values; }

  bool requires_grad() const { return payload_ && payload_->requires_grad; }
  void set_requires_grad(bool on) { payload_->requires_grad = on; }

  bool has_grad() const { return payload_ && !payload_->grad.empty(); }
  std::span<const S> grad() const { return payload_->grad; }
  std::span<S> grad_mut() {
    ensure_grad();
    return payload_->grad;
  }
  void ensure_grad() {
    if (payload_->grad.empty()) payload_->grad.assign(payload_->values.size(), S(0));
  }
  void zero_grad() {
    if (payload_) payload_->grad.assign(payload_->values.size(), S(0));
  }

  S item() const {
    GRES_CHECK_SHAPE(numel() == 1, "item() requires a single-element tensor, shape ",
                     shape_str(shape_));
    return payload_->values[0];
  }

  // Identity of the underlying buffer; used by ops to key gradient routing.
  const void* id() const { return payload_.get(); }
  bool same_storage(const Tensor& other) const { return payload_ == other.payload_; }

  Tensor clone() const {
    Tensor t(shape_, std::vector<S>(payload_->values), payload_->requires_grad);
    return t;
  }

  // Shared-buffer view with a different shape (same element count).
  Tensor reshaped(Shape shape) const {
    GRES_CHECK_SHAPE(shape_numel(shape) == numel(), "reshape ", shape_str(shape_),
                     " -> ", shape_str(shape), " changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.payload_ = payload_;
    return t;
  }

 private:
  struct Payload {
    std::vector<S> values;
    std::vector<S> grad;
    bool requires_grad = false;
  };

  Shape shape_;
  std::shared_ptr<Payload> payload_;
};

// Records backward steps of a dynamic computation graph in execution order,
// which is a topological order by construction. backward() replays the steps
// in reverse exactly once and then frees them. A tape is confined to the
// thread that created it.
template <class S>
class Tape {
 public:
  Tape() : prev_(current_ref()) { current_ref() = this; }

  ~Tape() { current_ref() = prev_; }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_ref(); }

  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  size_t num_ops() const { return steps_.size(); }

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
  // requires_grad tensor reachable from the loss. Accumulation is additive:
  // pre-existing gradients are kept. The recorded graph is freed afterwards.
  void backward(Tensor<S> loss) {
    GRES_CHECK_SHAPE(loss.numel() == 1, "backward expects a scalar loss, shape ",
                     shape_str(loss.shape()));
    loss.ensure_grad();
    loss.grad_mut()[0] += S(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
  }

 private:
  static Tape*& current_ref() {
    thread_local Tape* current = nullptr;
    return current;
  }

  std::vector<std::function<void()>> steps_;
  Tape* prev_ = nullptr;
};

}  // namespace gres2net

#endif  // GRES2NET_TENSOR_HPP
