#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "pvgf/error.hpp"

namespace pvgf {

using Shape = std::vector<int>;

inline long long shape_numel(const Shape& s) {
  long long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // same length as value when requires_grad
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major tensor of 64-bit floats. Copying a Tensor copies a handle;
// the storage (and gradient buffer) is shared. Values are mutable through any
// handle, which is what the optimizer and the finite-difference probes rely on.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0, requires_grad);
  }

  static Tensor filled(Shape shape, double v, bool requires_grad = false) {
    check_shape(shape);
    auto node = std::make_shared<detail::TensorNode>();
    node->value.assign(static_cast<std::size_t>(shape_numel(shape)), v);
    node->shape = std::move(shape);
    Tensor t(std::move(node));
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<long long>(data.size()))
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    Tensor t(std::move(node));
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  long long numel() const { return static_cast<long long>(node_->value.size()); }

  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }
  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  double operator[](long long i) const { return node_->value[static_cast<std::size_t>(i)]; }
  double& operator[](long long i) { return node_->value[static_cast<std::size_t>(i)]; }

  // 2D accessor; tensor must be rank 2.
  double at2(int r, int c) const { return node_->value[static_cast<std::size_t>(r) * dim(1) + c]; }
  double& at2(int r, int c) { return node_->value[static_cast<std::size_t>(r) * dim(1) + c]; }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }

  void set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    if (rg)
      node_->grad.assign(node_->value.size(), 0.0);
    else
      node_->grad.clear();
  }

  double* grad() { return node_->grad.data(); }
  const double* grad() const { return node_->grad.data(); }
  std::vector<double>& grad_values() { return node_->grad; }
  const std::vector<double>& grad_values() const { return node_->grad; }

  void zero_grad() {
    for (double& g : node_->grad) g = 0.0;
  }

  // Deep copy of values (not part of any tape).
  Tensor clone() const {
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = node_->shape;
    node->value = node_->value;
    return Tensor(std::move(node));
  }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

  static void check_shape(const Shape& s) {
    if (s.empty()) throw ShapeError("empty shape");
    for (int d : s)
      if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
  }

  std::shared_ptr<detail::TensorNode> node_;
};

// Reverse-mode tape. Constructing a Tape makes it the active tape for the
// current thread; differentiable ops append one backward step per forward op.
// backward() zeroes every participating gradient buffer, seeds the loss with 1
// and replays the steps in reverse, so repeated calls are bit-identical.
class Tape {
 public:
  Tape() {
    prev_ = active_ref();
    active_ref() = this;
  }

  ~Tape() { active_ref() = prev_; }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_ref(); }

  void record(std::function<void()> backward_step, std::initializer_list<Tensor> participants) {
    steps_.push_back(std::move(backward_step));
    for (const Tensor& t : participants)
      if (t.requires_grad()) nodes_.push_back(t.node());
  }

  void record(std::function<void()> backward_step, const std::vector<Tensor>& participants) {
    steps_.push_back(std::move(backward_step));
    for (const Tensor& t : participants)
      if (t.requires_grad()) nodes_.push_back(t.node());
  }

  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
      throw ShapeError("backward() requires a scalar loss");
    if (!loss.requires_grad())
      throw Error("backward() on a loss that is not connected to this tape");
    for (auto& n : nodes_)
      for (double& g : n->grad) g = 0.0;
    loss.node()->grad[0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

  std::size_t num_steps() const { return steps_.size(); }

 private:
  static Tape*& active_ref() {
    thread_local Tape* active = nullptr;
    return active;
  }

  std::vector<std::function<void()>> steps_;
  std::vector<std::shared_ptr<detail::TensorNode>> nodes_;
  Tape* prev_ = nullptr;
};

namespace detail {
// An op output participates in the tape when recording is on and any input
// carries gradients.
inline bool trace(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}
}  // namespace detail

}  // namespace pvgf
