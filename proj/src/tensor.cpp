// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lssd/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace lssd {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// BasicTensor

template <std::floating_point T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

template <std::floating_point T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <std::floating_point T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <std::floating_point T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <std::floating_point T>
T BasicTensor<T>::item() const {
  if (size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->values[0];
}

template <std::floating_point T>
std::span<T> BasicTensor<T>::mutable_grad() const {
  if (node_->grad.size() != node_->values.size()) {
    node_->grad.assign(node_->values.size(), T(0));
  }
  return node_->grad;
}

template <std::floating_point T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return BasicTensor(node_->shape, node_->values, false);
}

template <std::floating_point T>
bool BasicTensor<T>::all_finite() const {
  // Non-finite values are exactly those with an all-ones exponent field.
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits kExponent = static_cast<Bits>(sizeof(T) == 4 ? 0x7f800000ull : 0x7ff0000000000000ull);
  unsigned bad = 0;
  for (T v : node_->values) bad |= static_cast<unsigned>((std::bit_cast<Bits>(v) & kExponent) == kExponent);
  return bad == 0;
}

template <std::floating_point T>
template <std::floating_point U>
BasicTensor<U> BasicTensor<T>::cast() const {
  std::vector<U> out(node_->values.begin(), node_->values.end());
  return BasicTensor<U>(node_->shape, std::move(out), node_->requires_grad);
}

// ---------------------------------------------------------------------------
// Tape

template <std::floating_point T>
bool Tape<T>::contains(const TensorT& t) const {
  return std::any_of(records_.begin(), records_.end(),
                     [&](const Record& r) { return r.output.same_storage(t); });
}

template <std::floating_point T>
bool Tape<T>::should_record(std::initializer_list<const TensorT*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const TensorT* t) { return t->requires_grad(); });
}

template <std::floating_point T>
bool Tape<T>::should_record(std::span<const TensorT> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const TensorT& t) { return t.requires_grad(); });
}

template <std::floating_point T>
void Tape<T>::record(std::string_view kind, std::vector<TensorT> inputs, TensorT output,
                     BackwardFn backward) {
  records_.push_back(Record{kind, std::move(inputs), std::move(output), std::move(backward)});
}

template <std::floating_point T>
void Tape<T>::backward(const TensorT& root) {
  if (!root.defined() || root.size() != 1) {
    throw TapeError("backward root must be a scalar, got shape " +
                    (root.defined() ? shape_str(root.shape()) : std::string("<undefined>")));
  }
  if (!contains(root)) {
    throw TapeError("backward root was not produced on this tape");
  }
  TensorT seed = root;
  seed.mutable_grad()[0] = T(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
  records_.clear();
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

template <std::floating_point T>
void require_finite(const BasicTensor<T>& t, std::string_view op) {
  if (!t.all_finite()) {
    throw NumericError("non-finite input to " + std::string(op) + " (shape " +
                       shape_str(t.shape()) + ")");
  }
}

// glibc's tanhf is slow; for float, tanh(|x|) = (1 - e) / (1 + e) with
// e = exp(-2|x|) is accurate to a few ulps and several times faster.
template <std::floating_point T>
T fast_tanh(T x) {
  if constexpr (std::is_same_v<T, float>) {
    const float e = std::exp(-2.0f * std::fabs(x));
    return std::copysign((1.0f - e) / (1.0f + e), x);
  } else {
    return std::tanh(x);
  }
}

// Double-precision sum with eight independent partial sums.
template <std::floating_point T>
double sum_double(const T* x, std::size_t n) {
  double part[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t j = 0; j < 8; ++j) part[j] += static_cast<double>(x[i + j]);
  double total = 0.0;
  for (; i < n; ++i) total += static_cast<double>(x[i]);
  for (double p : part) total += p;
  return total;
}

// Adds `delta` into t's gradient when t participates in differentiation.
template <std::floating_point T, typename Src>
void accumulate(const BasicTensor<T>& t, const std::vector<Src>& delta) {
  if (!t.requires_grad()) return;
  auto g = t.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += static_cast<T>(delta[i]);
}

// C[M,N] (+)= op(A)[M,K] * op(B)[K,N]; op(A) is stored [K,M] when trans_a,
// op(B) is stored [N,K] when trans_b. Both operands are packed into double
// row-major buffers and C is computed in 6x8 register tiles.
using Lane8 = double __attribute__((vector_size(64)));

template <std::floating_point T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
          bool trans_a, bool trans_b, bool accumulate_into) {
  constexpr std::size_t kRows = 6;
  constexpr std::size_t kCols = 8;
  const std::size_t n_pad = (n + kCols - 1) / kCols * kCols;
  thread_local std::vector<double> pa;
  thread_local std::vector<double> pb;
  pa.resize(m * k);
  pb.assign(k * n_pad, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) pa[i * k + p] = trans_a ? a[p * m + i] : a[i * k + p];
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) pb[p * n_pad + j] = trans_b ? b[j * k + p] : b[p * n + j];

  auto store = [&](std::size_t i, std::size_t j0, const Lane8& acc) {
    T* crow = c + i * n + j0;
    const std::size_t cols = std::min(kCols, n - j0);
    for (std::size_t j = 0; j < cols; ++j) {
      crow[j] = static_cast<T>(accumulate_into ? static_cast<double>(crow[j]) + acc[j] : acc[j]);
    }
  };
  for (std::size_t j0 = 0; j0 < n; j0 += kCols) {
    std::size_t i0 = 0;
    for (; i0 + kRows <= m; i0 += kRows) {
      Lane8 acc[kRows] = {};
      for (std::size_t p = 0; p < k; ++p) {
        Lane8 bv;
        std::memcpy(&bv, &pb[p * n_pad + j0], sizeof bv);
        for (std::size_t r = 0; r < kRows; ++r) acc[r] += pa[(i0 + r) * k + p] * bv;
      }
      for (std::size_t r = 0; r < kRows; ++r) store(i0 + r, j0, acc[r]);
    }
    for (; i0 < m; ++i0) {
      Lane8 acc = {};
      for (std::size_t p = 0; p < k; ++p) {
        Lane8 bv;
        std::memcpy(&bv, &pb[p * n_pad + j0], sizeof bv);
        acc += pa[i0 * k + p] * bv;
      }
      store(i0, j0, acc);
    }
  }
}

// Maps output elements to broadcast operands. An operand is either
// full-shape, periodic (its shape is a suffix of the output's, so element i
// reads i % period) or addressed through an explicit index array.
struct OperandMap {
  std::size_t period = 0;
  std::vector<std::size_t> index;

  std::size_t operator()(std::size_t i) const {
    if (!index.empty()) return index[i];
    return period ? i % period : i;
  }
};

struct BroadcastPlan {
  Shape out;
  OperandMap a;
  OperandMap b;
};

std::vector<std::size_t> broadcast_index(const Shape& src, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - src.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t d = rank; d-- > offset;) {
    const std::size_t extent = src[d - offset];
    strides[d] = extent == 1 ? 0 : stride;
    stride *= extent;
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    index[i] = pos;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      pos += strides[d];
      if (counter[d] < out[d]) break;
      pos -= strides[d] * counter[d];
      counter[d] = 0;
    }
  }
  return index;
}

OperandMap operand_map(const Shape& src, const Shape& out) {
  OperandMap map;
  if (src == out) return map;
  auto first = std::find_if(src.begin(), src.end(), [](std::size_t e) { return e != 1; });
  const auto tail = static_cast<std::size_t>(src.end() - first);
  if (std::equal(first, src.end(), out.end() - static_cast<std::ptrdiff_t>(tail))) {
    map.period = shape_numel(src);
    return map;
  }
  map.index = broadcast_index(src, out);
  return map;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, std::string_view op) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  plan.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    }
    plan.out[i] = std::max(da, db);
  }
  plan.a = operand_map(a, plan.out);
  plan.b = operand_map(b, plan.out);
  return plan;
}

// Calls body(i, ia, ib) for every output element i. Suffix broadcasts run as
// contiguous blocks so the body vectorizes; index maps fall back to lookups.
template <typename Body>
void for_each_element(const BroadcastPlan& plan, std::size_t n, Body body) {
  if (!plan.a.index.empty() || !plan.b.index.empty()) {
    for (std::size_t i = 0; i < n; ++i) body(i, plan.a(i), plan.b(i));
    return;
  }
  const std::size_t pa = plan.a.period ? plan.a.period : n;
  const std::size_t pb = plan.b.period ? plan.b.period : n;
  const std::size_t sa = pa == 1 ? 0 : 1;
  const std::size_t sb = pb == 1 ? 0 : 1;
  const std::size_t block = std::min(sa ? pa : n, sb ? pb : n);
  if (block == 0) return;
  for (std::size_t base = 0; base < n; base += block) {
    const std::size_t oa = sa ? base % pa : 0;
    const std::size_t ob = sb ? base % pb : 0;
    for (std::size_t j = 0; j < block; ++j) body(base + j, oa + sa * j, ob + sb * j);
  }
}

// Elementwise binary op. grad_a/grad_b give d(out)/d(a), d(out)/d(b) from (x, y).
template <std::floating_point T, typename Fwd, typename GradA, typename GradB>
BasicTensor<T> binary(Tape<T>& tape, std::string_view kind, const BasicTensor<T>& a,
                      const BasicTensor<T>& b, Fwd fwd, GradA grad_a, GradB grad_b) {
  require_finite(a, kind);
  require_finite(b, kind);
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape(), kind));
  const std::size_t n = shape_numel(plan->out);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<T> out(n);
  for_each_element(*plan, n, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    out[i] = fwd(av[ia], bv[ib]);
  });
  const bool track = tape.should_record({&a, &b});
  BasicTensor<T> result = BasicTensor<T>(plan->out, std::move(out), track);
  if (track) {
    tape.record(kind, {a, b}, result, [a, b, result, plan, grad_a, grad_b]() mutable {
      const auto g = result.grad();
      const auto av = a.values();
      const auto bv = b.values();
      const std::size_t n = g.size();
      // Full-shape operands receive one term per element and are written in
      // place; broadcast operands are reduced in double first.
      if (a.requires_grad()) {
        if (plan->a.period == 0 && plan->a.index.empty()) {
          auto da = a.mutable_grad();
          for_each_element(*plan, n, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            da[i] += static_cast<T>(static_cast<double>(g[i]) * grad_a(av[ia], bv[ib]));
          });
        } else {
          std::vector<double> d(a.size(), 0.0);
          for_each_element(*plan, n, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            d[ia] += static_cast<double>(g[i]) * grad_a(av[ia], bv[ib]);
          });
          accumulate(a, d);
        }
      }
      if (b.requires_grad()) {
        if (plan->b.period == 0 && plan->b.index.empty()) {
          auto db = b.mutable_grad();
          for_each_element(*plan, n, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            db[i] += static_cast<T>(static_cast<double>(g[i]) * grad_b(av[ia], bv[ib]));
          });
        } else {
          std::vector<double> d(b.size(), 0.0);
          for_each_element(*plan, n, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            d[ib] += static_cast<double>(g[i]) * grad_b(av[ia], bv[ib]);
          });
          accumulate(b, d);
        }
      }
    });
  }
  return result;
}

// Elementwise unary op; grad(x, y) = d(out)/d(in).
template <std::floating_point T, typename Fwd, typename Grad>
BasicTensor<T> unary(Tape<T>& tape, std::string_view kind, const BasicTensor<T>& a, Fwd fwd,
                     Grad grad) {
  require_finite(a, kind);
  const auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  const bool track = tape.should_record({&a});
  BasicTensor<T> result = BasicTensor<T>(a.shape(), std::move(out), track);
  if (track) {
    tape.record(kind, {a}, result, [a, result, grad]() mutable {
      const auto g = result.grad();
      const auto x = a.values();
      const auto y = result.values();
      auto da = a.mutable_grad();
      for (std::size_t i = 0; i < x.size(); ++i) {
        da[i] += static_cast<T>(static_cast<double>(g[i]) * grad(x[i], y[i]));
      }
    });
  }
  return result;
}

}  // namespace

namespace ops {

template <std::floating_point T>
BasicTensor<T> matmul(Tape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b,
                      bool trans_b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  require_finite(a, "matmul");
  require_finite(b, "matmul");
  const std::size_t k = a.shape().back();
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t bk = trans_b ? b.shape().back() : b.shape()[b.rank() - 2];
  const std::size_t n = trans_b ? b.shape()[b.rank() - 2] : b.shape().back();
  const bool shared = b.rank() == 2;
  bool leading_match = shared;
  if (!shared && b.rank() == a.rank()) {
    leading_match = std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin());
  }
  if (bk != k || !leading_match) {
    throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + (trans_b ? " (b transposed)" : ""));
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  const std::size_t batch = shared ? 1 : a.size() / (m * k);
  const std::size_t rows = shared ? a.size() / k : m;
  std::vector<T> out(shape_numel(out_shape));
  for (std::size_t s = 0; s < batch; ++s) {
    gemm(a.values().data() + s * rows * k, b.values().data() + s * k * n,
         out.data() + s * rows * n, rows, k, n, false, trans_b, false);
  }
  const bool track = tape.should_record({&a, &b});
  BasicTensor<T> result = BasicTensor<T>(std::move(out_shape), std::move(out), track);
  if (track) {
    tape.record("matmul", {a, b}, result,
                [a, b, result, batch, rows, k, n, trans_b]() mutable {
                  const T* g = result.grad().data();
                  for (std::size_t s = 0; s < batch; ++s) {
                    const T* gs = g + s * rows * n;
                    const T* as = a.values().data() + s * rows * k;
                    const T* bs = b.values().data() + s * k * n;
                    if (a.requires_grad()) {
                      T* da = a.mutable_grad().data() + s * rows * k;
                      // dA = dC * op(B)^T
                      gemm(gs, bs, da, rows, n, k, false, !trans_b, true);
                    }
                    if (b.requires_grad()) {
                      T* db = b.mutable_grad().data() + s * k * n;
                      if (trans_b) {
                        gemm(gs, as, db, n, rows, k, true, false, true);  // dB = dC^T A
                      } else {
                        gemm(as, gs, db, k, rows, n, true, false, true);  // dB = A^T dC
                      }
                    }
                  }
                });
  }
  return result;
}

template <std::floating_point T>
BasicTensor<T> add(Tape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(
      tape, "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return 1.0; },
      [](T, T) { return 1.0; });
}

template <std::floating_point T>
BasicTensor<T> sub(Tape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(
      tape, "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return 1.0; },
      [](T, T) { return -1.0; });
}

template <std::floating_point T>
BasicTensor<T> mul(Tape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(
      tape, "mul", a, b, [](T x, T y) { return x * y; },
      [](T, T y) { return static_cast<double>(y); }, [](T x, T) { return static_cast<double>(x); });
}

template <std::floating_point T>
BasicTensor<T> scale(Tape<T>& tape, const BasicTensor<T>& a, T factor) {
  return unary(
      tape, "scale", a, [factor](T x) { return x * factor; },
      [factor](T, T) { return static_cast<double>(factor); });
}

template <std::floating_point T>
BasicTensor<T> add_scalar(Tape<T>& tape, const BasicTensor<T>& a, T offset) {
  return unary(
      tape, "add_scalar", a, [offset](T x) { return x + offset; }, [](T, T) { return 1.0; });
}

template <std::floating_point T>
BasicTensor<T> exp(Tape<T>& tape, const BasicTensor<T>& a) {
  auto out = unary(
      tape, "exp", a, [](T x) { return std::exp(x); },
      [](T, T y) { return static_cast<double>(y); });
  if (!out.all_finite()) throw NumericError("exp overflow");
  return out;
}

template <std::floating_point T>
BasicTensor<T> log(Tape<T>& tape, const BasicTensor<T>& a, T floor) {
  if (floor <= T(0)) {
    const auto v = a.values();
    if (std::any_of(v.begin(), v.end(), [](T x) { return !(x > T(0)); })) {
      throw NumericError("log of non-positive value");
    }
  }
  return unary(
      tape, "log", a, [floor](T x) { return std::log(std::max(x, floor)); },
      [floor](T x, T) { return x > floor ? 1.0 / static_cast<double>(x) : 0.0; });
}

template <std::floating_point T>
BasicTensor<T> tanh(Tape<T>& tape, const BasicTensor<T>& a) {
  return unary(
      tape, "tanh", a, [](T x) { return fast_tanh(x); },
      [](T, T y) { return 1.0 - static_cast<double>(y) * y; });
}

template <std::floating_point T>
BasicTensor<T> softmax(Tape<T>& tape, const BasicTensor<T>& a) {
  require_finite(a, "softmax");
  if (a.rank() == 0 || a.shape().back() == 0) throw ShapeError("softmax over empty axis");
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.size() / d;
  const auto x = a.values();
  std::vector<T> out(a.size());
  std::vector<double> e(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d;
    T* yr = out.data() + r * d;
    const T mx = *std::max_element(xr, xr + d);
    double total = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      e[j] = std::exp(static_cast<double>(xr[j]) - mx);
      total += e[j];
    }
    for (std::size_t j = 0; j < d; ++j) yr[j] = static_cast<T>(e[j] / total);
  }
  const bool track = tape.should_record({&a});
  BasicTensor<T> result = BasicTensor<T>(a.shape(), std::move(out), track);
  if (track) {
    tape.record("softmax", {a}, result, [a, result, rows, d]() mutable {
      const auto g = result.grad();
      const auto y = result.values();
      auto dx = a.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(g[r * d + j]) * y[r * d + j];
        for (std::size_t j = 0; j < d; ++j) {
          dx[r * d + j] += static_cast<T>(static_cast<double>(y[r * d + j]) * (g[r * d + j] - dot));
        }
      }
    });
  }
  return result;
}

template <std::floating_point T>
BasicTensor<T> gather_rows(Tape<T>& tape, const BasicTensor<T>& table,
                           std::span<const std::int32_t> ids) {
  if (table.rank() != 2) throw ShapeError("gather_rows needs a [V, D] table, got " + shape_str(table.shape()));
  require_finite(table, "gather_rows");
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<std::int32_t> index(ids.begin(), ids.end());
  for (auto id : index) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw ShapeError("gather_rows id " + std::to_string(id) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
  }
  std::vector<T> out(index.size() * d);
  const auto tv = table.values();
  for (std::size_t i = 0; i < index.size(); ++i) {
    std::copy_n(tv.data() + static_cast<std::size_t>(index[i]) * d, d, out.data() + i * d);
  }
  const bool track = tape.should_record({&table});
  BasicTensor<T> result = BasicTensor<T>(Shape{index.size(), d}, std::move(out), track);
  if (track) {
    tape.record("gather", {table}, result, [table, result, index = std::move(index), d]() mutable {
      const auto g = result.grad();
      std::vector<double> dt(table.size(), 0.0);
      for (std::size_t i = 0; i < index.size(); ++i) {
        const std::size_t row = static_cast<std::size_t>(index[i]) * d;
        for (std::size_t j = 0; j < d; ++j) dt[row + j] += g[i * d + j];
      }
      accumulate(table, dt);
    });
  }
  return result;
}

namespace {

template <std::floating_point T>
BasicTensor<T> reduce_all(Tape<T>& tape, const BasicTensor<T>& a, bool average) {
  require_finite(a, average ? "mean" : "sum");
  const auto v = a.values();
  const double total = sum_double(v.data(), v.size());
  const double factor = average ? 1.0 / static_cast<double>(std::max<std::size_t>(v.size(), 1)) : 1.0;
  const bool track = tape.should_record({&a});
  BasicTensor<T> result = BasicTensor<T>(Shape{1}, {static_cast<T>(total * factor)}, track);
  if (track) {
    tape.record(average ? "mean" : "sum", {a}, result, [a, result, factor]() mutable {
      const T g = static_cast<T>(static_cast<double>(result.grad()[0]) * factor);
      for (T& x : a.mutable_grad()) x += g;
    });
  }
  return result;
}

template <std::floating_point T>
BasicTensor<T> reduce_last(Tape<T>& tape, const BasicTensor<T>& a, bool average) {
  require_finite(a, average ? "mean_last" : "sum_last");
  if (a.rank() == 0) throw ShapeError("reduction over the last axis of a rank-0 tensor");
  const std::size_t d = a.shape().back();
  const std::size_t rows = d == 0 ? 0 : a.size() / d;
  const double factor = average ? 1.0 / static_cast<double>(d) : 1.0;
  const auto v = a.values();
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < d; ++j) total += v[r * d + j];
    out[r] = static_cast<T>(total * factor);
  }
  Shape shape = a.shape();
  shape.back() = 1;
  const bool track = tape.should_record({&a});
  BasicTensor<T> result = BasicTensor<T>(std::move(shape), std::move(out), track);
  if (track) {
    tape.record(average ? "mean_last" : "sum_last", {a}, result,
                [a, result, rows, d, factor]() mutable {
                  const auto g = result.grad();
                  auto dx = a.mutable_grad();
                  for (std::size_t r = 0; r < rows; ++r) {
                    const T gr = static_cast<T>(g[r] * factor);
                    for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += gr;
                  }
                });
  }
  return result;
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

template <std::floating_point T>
BasicTensor<T> sum(Tape<T>& tape, const BasicTensor<T>& a) {
  return reduce_all(tape, a, false);
}

template <std::floating_point T>
BasicTensor<T> mean(Tape<T>& tape, const BasicTensor<T>& a) {
  return reduce_all(tape, a, true);
}

template <std::floating_point T>
BasicTensor<T> sum_last(Tape<T>& tape, const BasicTensor<T>& a) {
  return reduce_last(tape, a, false);
}

template <std::floating_point T>
BasicTensor<T> mean_last(Tape<T>& tape, const BasicTensor<T>& a) {
  return reduce_last(tape, a, true);
}

template <std::floating_point T>
BasicTensor<T> concat(Tape<T>& tape, const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    require_finite(p, "concat");
    bool ok = p.rank() == first.size();
    for (std::size_t i = 0; ok && i < first.size(); ++i) {
      if (i != axis && p.shape()[i] != first[i]) ok = false;
    }
    if (!ok) {
      throw ShapeError("concat shape mismatch: " + shape_str(first) + " vs " + shape_str(p.shape()));
    }
    out_shape[axis] += p.shape()[axis];
  }
  const AxisSplit out_split = split_axis(out_shape, axis);
  std::vector<T> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = p.shape()[axis] * out_split.inner;
    for (std::size_t o = 0; o < out_split.outer; ++o) {
      std::copy_n(p.values().data() + o * chunk, chunk,
                  out.data() + o * out_split.extent * out_split.inner + offset);
    }
    offset += chunk;
  }
  const bool track = tape.should_record(std::span<const BasicTensor<T>>(parts));
  BasicTensor<T> result = BasicTensor<T>(std::move(out_shape), std::move(out), track);
  if (track) {
    tape.record("concat", parts, result, [parts, result, out_split]() mutable {
      const auto g = result.grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        const std::size_t chunk = p.size() / out_split.outer;
        if (p.requires_grad()) {
          auto dp = p.mutable_grad();
          for (std::size_t o = 0; o < out_split.outer; ++o) {
            const T* src = g.data() + o * out_split.extent * out_split.inner + offset;
            for (std::size_t j = 0; j < chunk; ++j) dp[o * chunk + j] += src[j];
          }
        }
        offset += chunk;
      }
    });
  }
  return result;
}

template <std::floating_point T>
BasicTensor<T> slice(Tape<T>& tape, const BasicTensor<T>& a, std::size_t axis, std::size_t begin,
                     std::size_t end) {
  if (axis >= a.rank() || begin > end || end > a.shape()[axis]) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  require_finite(a, "slice");
  const AxisSplit in = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * in.inner;
  std::vector<T> out(in.outer * chunk);
  for (std::size_t o = 0; o < in.outer; ++o) {
    std::copy_n(a.values().data() + o * in.extent * in.inner + begin * in.inner, chunk,
                out.data() + o * chunk);
  }
  const bool track = tape.should_record({&a});
  BasicTensor<T> result = BasicTensor<T>(std::move(out_shape), std::move(out), track);
  if (track) {
    tape.record("slice", {a}, result, [a, result, in, begin, chunk]() mutable {
      const auto g = result.grad();
      auto da = a.mutable_grad();
      for (std::size_t o = 0; o < in.outer; ++o) {
        T* dst = da.data() + o * in.extent * in.inner + begin * in.inner;
        for (std::size_t j = 0; j < chunk; ++j) dst[j] += g[o * chunk + j];
      }
    });
  }
  return result;
}

template <std::floating_point T>
BasicTensor<T> reshape(Tape<T>& tape, const BasicTensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(a.values().begin(), a.values().end());
  const bool track = tape.should_record({&a});
  BasicTensor<T> result = BasicTensor<T>(std::move(shape), std::move(out), track);
  if (track) {
    tape.record("reshape", {a}, result, [a, result]() mutable {
      const auto g = result.grad();
      auto da = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    });
  }
  return result;
}

template <std::floating_point T>
BasicTensor<T> transpose(Tape<T>& tape, const BasicTensor<T>& a, std::size_t axis0,
                         std::size_t axis1) {
  if (axis0 >= a.rank() || axis1 >= a.rank()) {
    throw ShapeError("transpose axes out of range for " + shape_str(a.shape()));
  }
  if (axis0 > axis1) std::swap(axis0, axis1);
  Shape out_shape = a.shape();
  std::swap(out_shape[axis0], out_shape[axis1]);
  // View the input as [outer, p, mid, q, inner] and the output as
  // [outer, q, mid, p, inner].
  const Shape& in = a.shape();
  std::size_t outer = 1, mid = 1, inner = 1;
  for (std::size_t d = 0; d < axis0; ++d) outer *= in[d];
  for (std::size_t d = axis0 + 1; d < axis1; ++d) mid *= in[d];
  for (std::size_t d = axis1 + 1; d < in.size(); ++d) inner *= in[d];
  const std::size_t p = in[axis0];
  const std::size_t q = in[axis1];
  // Calls f(input offset, output offset, inner) for every contiguous run.
  auto for_each_run = [=](auto&& f) {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t m = 0; m < mid; ++m)
          for (std::size_t j = 0; j < q; ++j) {
            const std::size_t src = (((o * p + i) * mid + m) * q + j) * inner;
            const std::size_t dst = (((o * q + j) * mid + m) * p + i) * inner;
            f(src, dst);
          }
  };
  const auto v = a.values();
  std::vector<T> out(a.size());
  for_each_run([&](std::size_t src, std::size_t dst) {
    std::copy_n(v.data() + src, inner, out.data() + dst);
  });
  const bool track = tape.should_record({&a});
  BasicTensor<T> result = BasicTensor<T>(std::move(out_shape), std::move(out), track);
  if (track) {
    tape.record("transpose", {a}, result, [a, result, for_each_run, inner]() mutable {
      const auto g = result.grad();
      auto da = a.mutable_grad();
      for_each_run([&](std::size_t src, std::size_t dst) {
        for (std::size_t k = 0; k < inner; ++k) da[src + k] += g[dst + k];
      });
    });
  }
  return result;
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Finite differences

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

template <std::floating_point T>
double central_difference(const std::function<double()>& f, T& coordinate, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  const T saved = coordinate;
  coordinate = static_cast<T>(saved + step);
  const double plus = f();
  const double h_plus = static_cast<double>(coordinate) - saved;
  coordinate = static_cast<T>(saved - step);
  const double minus = f();
  const double h_minus = saved - static_cast<double>(coordinate);
  coordinate = saved;
  if (!std::isfinite(plus) || !std::isfinite(minus)) {
    throw NumericError("non-finite function value during finite differencing");
  }
  return (plus - minus) / (h_plus + h_minus);
}

template <std::floating_point T>
double gradient_check(const ScalarFunction<T>& f, const BasicTensor<T>& point, double step) {
  BasicTensor<T> x = point.clone();
  x.set_requires_grad(true);
  {
    Tape<T> tape;
    BasicTensor<T> y = f(tape, x);
    if (!y.all_finite()) throw NumericError("non-finite function value at the check point");
    if (tape.contains(y)) tape.backward(y);
  }
  std::vector<double> analytic(x.size(), 0.0);
  if (x.has_grad()) {
    for (std::size_t i = 0; i < x.size(); ++i) analytic[i] = x.grad()[i];
  }
  auto eval = [&]() {
    Tape<T> tape(false);
    return static_cast<double>(f(tape, x).item());
  };
  double worst = 0.0;
  auto values = x.mutable_values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double numeric = central_difference(eval, values[i], step);
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Instantiations

#define LSSD_INSTANTIATE(T)                                                                      \
  template class BasicTensor<T>;                                                                 \
  template class Tape<T>;                                                                        \
  template BasicTensor<T> ops::matmul(Tape<T>&, const BasicTensor<T>&, const BasicTensor<T>&,    \
                                      bool);                                                     \
  template BasicTensor<T> ops::add(Tape<T>&, const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> ops::sub(Tape<T>&, const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> ops::mul(Tape<T>&, const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> ops::scale(Tape<T>&, const BasicTensor<T>&, T);                        \
  template BasicTensor<T> ops::add_scalar(Tape<T>&, const BasicTensor<T>&, T);                   \
  template BasicTensor<T> ops::exp(Tape<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> ops::log(Tape<T>&, const BasicTensor<T>&, T);                          \
  template BasicTensor<T> ops::tanh(Tape<T>&, const BasicTensor<T>&);                            \
  template BasicTensor<T> ops::softmax(Tape<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> ops::gather_rows(Tape<T>&, const BasicTensor<T>&,                      \
                                           std::span<const std::int32_t>);                       \
  template BasicTensor<T> ops::sum(Tape<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> ops::mean(Tape<T>&, const BasicTensor<T>&);                            \
  template BasicTensor<T> ops::sum_last(Tape<T>&, const BasicTensor<T>&);                        \
  template BasicTensor<T> ops::mean_last(Tape<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> ops::concat(Tape<T>&, const std::vector<BasicTensor<T>>&,              \
                                      std::size_t);                                              \
  template BasicTensor<T> ops::slice(Tape<T>&, const BasicTensor<T>&, std::size_t, std::size_t,  \
                                     std::size_t);                                               \
  template BasicTensor<T> ops::reshape(Tape<T>&, const BasicTensor<T>&, Shape);                  \
  template BasicTensor<T> ops::transpose(Tape<T>&, const BasicTensor<T>&, std::size_t,           \
                                         std::size_t);                                           \
  template double central_difference(const std::function<double()>&, T&, double);                \
  template double gradient_check(const ScalarFunction<T>&, const BasicTensor<T>&, double);

LSSD_INSTANTIATE(float)
LSSD_INSTANTIATE(double)

#undef LSSD_INSTANTIATE

template BasicTensor<double> BasicTensor<float>::cast<double>() const;
template BasicTensor<float> BasicTensor<double>::cast<float>() const;
template BasicTensor<float> BasicTensor<float>::cast<float>() const;
template BasicTensor<double> BasicTensor<double>::cast<double>() const;

}  // namespace lssd
