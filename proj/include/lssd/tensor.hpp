// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with a reverse-mode tape.
//
// Tensors are shared handles: copying a BasicTensor aliases the same storage,
// which is how model parameters are threaded through the tape. Use clone() for
// a value copy. Element type is a template parameter; float is the training
// type and double is instantiated for finite-difference verification.

#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lssd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <std::floating_point T>
class Tape;

template <std::floating_point T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->values.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }

  std::span<const T> values() const { return node_->values; }
  std::span<T> mutable_values() { return node_->values; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  // Allocates a zero gradient buffer on first use. Const because tensors are
  // handles; the buffer belongs to the shared node.
  std::span<T> mutable_grad() const;
  void clear_grad() { node_->grad.clear(); }

  // Value copy with no gradient tracking.
  BasicTensor clone() const;
  bool same_storage(const BasicTensor& other) const { return node_ == other.node_; }
  bool all_finite() const;

  template <std::floating_point U>
  BasicTensor<U> cast() const;

 private:
  struct Node {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;

  friend class Tape<T>;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Ordered record of primitive applications. A tape is single-threaded and
// single-use: backward() consumes the records.
template <std::floating_point T>
class Tape {
 public:
  using TensorT = BasicTensor<T>;
  using BackwardFn = std::function<void()>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape no_grad() { return Tape(false); }

  bool recording() const { return recording_; }
  std::size_t size() const { return records_.size(); }
  std::string_view kind(std::size_t index) const { return records_.at(index).kind; }
  bool contains(const TensorT& t) const;

  // True when the op producing from `inputs` must be recorded.
  bool should_record(std::initializer_list<const TensorT*> inputs) const;
  bool should_record(std::span<const TensorT> inputs) const;

  void record(std::string_view kind, std::vector<TensorT> inputs, TensorT output,
              BackwardFn backward);

  // Seeds d(root)/d(root) = 1 and runs every record once, newest first.
  // Leaf gradients accumulate; the tape is emptied afterwards.
  void backward(const TensorT& root);

 private:
  struct Record {
    std::string_view kind;
    std::vector<TensorT> inputs;
    TensorT output;
    BackwardFn backward;
  };
  std::vector<Record> records_;
  bool recording_;
};

namespace ops {

// Contraction over the last axis of `a` against `b`. `a` is [..., M, K]; `b`
// is [K, N] (shared across the leading dims of `a`) or [..., K, N] with the
// same leading dims. With trans_b, `b` is stored as [N, K] / [..., N, K].
template <std::floating_point T>
BasicTensor<T> matmul(Tape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b,
                      bool trans_b = false);

// Elementwise with numpy-style broadcasting.
template <std::floating_point T>
BasicTensor<T> add(Tape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b);
template <std::floating_point T>
BasicTensor<T> sub(Tape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b);
template <std::floating_point T>
BasicTensor<T> mul(Tape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b);

template <std::floating_point T>
BasicTensor<T> scale(Tape<T>& tape, const BasicTensor<T>& a, T factor);
template <std::floating_point T>
BasicTensor<T> add_scalar(Tape<T>& tape, const BasicTensor<T>& a, T offset);

template <std::floating_point T>
BasicTensor<T> exp(Tape<T>& tape, const BasicTensor<T>& a);
// log(max(a, floor)); the gradient is zero where the floor is active.
// floor == 0 requires strictly positive input.
template <std::floating_point T>
BasicTensor<T> log(Tape<T>& tape, const BasicTensor<T>& a, T floor = T(0));
template <std::floating_point T>
BasicTensor<T> tanh(Tape<T>& tape, const BasicTensor<T>& a);

// Softmax along the last axis.
template <std::floating_point T>
BasicTensor<T> softmax(Tape<T>& tape, const BasicTensor<T>& a);

// Rows of a [V, D] table selected by ids -> [ids.size(), D].
template <std::floating_point T>
BasicTensor<T> gather_rows(Tape<T>& tape, const BasicTensor<T>& table,
                           std::span<const std::int32_t> ids);

template <std::floating_point T>
BasicTensor<T> sum(Tape<T>& tape, const BasicTensor<T>& a);
template <std::floating_point T>
BasicTensor<T> mean(Tape<T>& tape, const BasicTensor<T>& a);
// Reductions over the last axis keeping it as extent 1.
template <std::floating_point T>
BasicTensor<T> sum_last(Tape<T>& tape, const BasicTensor<T>& a);
template <std::floating_point T>
BasicTensor<T> mean_last(Tape<T>& tape, const BasicTensor<T>& a);

template <std::floating_point T>
BasicTensor<T> concat(Tape<T>& tape, const std::vector<BasicTensor<T>>& parts, std::size_t axis);
template <std::floating_point T>
BasicTensor<T> slice(Tape<T>& tape, const BasicTensor<T>& a, std::size_t axis,
                     std::size_t begin, std::size_t end);

// Layout ops.
template <std::floating_point T>
BasicTensor<T> reshape(Tape<T>& tape, const BasicTensor<T>& a, Shape shape);
template <std::floating_point T>
BasicTensor<T> transpose(Tape<T>& tape, const BasicTensor<T>& a, std::size_t axis0,
                         std::size_t axis1);

}  // namespace ops

// Finite-difference verification.

// |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)
double relative_error(double analytic, double numeric);

// (f(x + h) - f(x - h)) / 2h, perturbing `coordinate` in place and restoring it.
template <std::floating_point T>
double central_difference(const std::function<double()>& f, T& coordinate, double step);

template <std::floating_point T>
using ScalarFunction = std::function<BasicTensor<T>(Tape<T>&, const BasicTensor<T>&)>;

// Max over coordinates of the relative error between the tape gradient of
// f at `point` and central differences with the given step.
template <std::floating_point T>
double gradient_check(const ScalarFunction<T>& f, const BasicTensor<T>& point, double step);

}  // namespace lssd
