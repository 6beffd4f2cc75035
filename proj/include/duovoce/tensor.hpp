// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// Operations record themselves on the thread's active Tape (see TapeScope)
// whenever at least one input requires a gradient. With no active tape the
// same calls run as plain inference. A tape is single-use: backward()
// consumes it.
//
// Everything is templated on the element type. Models, training and
// checkpoints use `Tensor` (float); `TensorD` (double) exists so the
// finite-difference oracle can exercise the exact same op code with enough
// precision to resolve small gradients.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace duovoce {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Tape;

namespace detail {

struct ImplBase {
  Shape shape;
  bool requires_grad = false;
  const Tape* producer = nullptr;  // null for leaves

  virtual ~ImplBase() = default;
  virtual bool has_grad() const = 0;
  virtual void release_grad() = 0;
  virtual void seed_unit_grad() = 0;
};

template <typename T>
struct TensorImpl final : ImplBase {
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this tensor

  bool has_grad() const override { return !grad.empty(); }
  void release_grad() override { std::vector<T>().swap(grad); }
  void seed_unit_grad() override { grad.assign(data.size(), T(1)); }
  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::shared_ptr<detail::ImplBase> output,
              std::function<void()> backward);
  // Propagates d(loss)/d(x) to every tensor recorded on this tape, visiting
  // entries in reverse execution order. Throws AutodiffError if `loss` is not
  // a single element, was not produced by this tape, or the tape was already
  // consumed.
  void backward(const detail::ImplBase& loss);

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Entry {
    std::shared_ptr<detail::ImplBase> output;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

Tape* active_tape();

// Makes `tape` the active tape of the calling thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording (e.g. for frozen teacher passes inside a training step).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0), bool requires_grad = false);
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  // Only leaves may toggle participation.
  void set_requires_grad(bool on);
  bool is_leaf() const { return impl_->producer == nullptr; }

  bool has_grad() const { return impl_->has_grad(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad();

  // New leaf holding a copy of the data, detached from any tape.
  BasicTensor detach() const;
  template <typename U>
  BasicTensor<U> cast() const;

  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }
  explicit BasicTensor(std::shared_ptr<detail::TensorImpl<T>> impl)
      : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <typename T>
template <typename U>
BasicTensor<U> BasicTensor<T>::cast() const {
  std::vector<U> out(numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<U>(impl_->data[i]);
  }
  return BasicTensor<U>(shape(), std::move(out), requires_grad());
}

namespace detail {

// Hooks for ops defined outside tensor.cpp (spectral transforms, fused
// layers). `recording` is true when a tape is active and some input needs a
// gradient; `attach_backward` marks `out` as produced by the active tape.
template <typename T>
bool recording(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (active_tape() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void attach_backward(BasicTensor<T>& out, std::function<void()> fn) {
  Tape* tape = active_tape();
  out.impl()->requires_grad = true;
  out.impl()->producer = tape;
  tape->record(out.impl(), std::move(fn));
}

}  // namespace detail

struct Conv2dParams {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
};

// Elementwise, with numpy-style broadcasting.
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> neg(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& x, double s);
template <typename T> BasicTensor<T> add_scalar(const BasicTensor<T>& x, double s);
template <typename T> BasicTensor<T> square(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> sqrt(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> exp(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> log(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> tanh(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> leaky_relu(const BasicTensor<T>& x, double slope);
// max(x, lo); the gradient is passed only where x > lo.
template <typename T> BasicTensor<T> clamp_min(const BasicTensor<T>& x, double lo);

// (M x K) * (K x N).
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// x: (N, C, H, W); weight: (O, C, kH, kW); bias: (O) or undefined.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, const Conv2dParams& p);
// x: (N, C, H, W); weight: (C, O, kH, kW); bias: (O) or undefined.
// Output spatial size (H - 1) * stride - 2 * pad + k.
template <typename T>
BasicTensor<T> conv2d_transpose(const BasicTensor<T>& x,
                                const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias,
                                const Conv2dParams& p);

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis);
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::size_t axis,
                     std::size_t start, std::size_t length);
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& order);

template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
// Reduces one axis, which is removed from the shape.
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x, std::size_t axis);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& x);  // last axis
// Zero-mean, unit-variance per row of a (rows x cols) tensor:
// (x - mean) / sqrt(var + eps), population variance.
template <typename T>
BasicTensor<T> standardize_rows(const BasicTensor<T>& x, double eps);

// Accumulates d(loss)/d(leaf) using the active tape.
template <typename T> void backward(const BasicTensor<T>& loss);

struct GradCheckOptions {
  double eps = 1e-3;
  // Coordinates sampled per tensor; 0 checks every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  // Divide each deviation by the largest gradient magnitude in its tensor
  // instead of by its own magnitude. Near-zero entries are otherwise swamped
  // by rounding of f in 32-bit runs.
  bool normwise = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
};

// Compares tape gradients of `f` with central differences over `params`.
// Per coordinate: |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <typename T>
GradCheckResult grad_check(const std::function<BasicTensor<T>()>& f,
                           std::vector<BasicTensor<T>> params,
                           const GradCheckOptions& opts = {});
template <typename T>
double grad_check(
    const std::function<BasicTensor<T>(const BasicTensor<T>&)>& f,
    const BasicTensor<T>& x, double eps);

// p <- p - lr * grad, then zeroes the gradients. Throws AutodiffError if a
// parameter has no gradient.
template <typename T>
void sgd_step(std::span<BasicTensor<T>> params, double lr);
// Scales gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
template <typename T>
double clip_grad_norm(std::span<BasicTensor<T>> params, double max_norm);

}  // namespace duovoce
