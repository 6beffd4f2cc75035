// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "duovoce/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "duovoce/random.hpp"

namespace duovoce {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// ---------------------------------------------------------------- tape

namespace {
thread_local Tape* g_active_tape = nullptr;
}  // namespace

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) {
  g_active_tape = nullptr;
}
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

void Tape::record(std::shared_ptr<detail::ImplBase> output,
                  std::function<void()> backward) {
  if (consumed_) {
    throw AutodiffError("cannot record on a consumed tape");
  }
  entries_.push_back({std::move(output), std::move(backward)});
}

void Tape::backward(const detail::ImplBase& loss) {
  if (consumed_) {
    throw AutodiffError("tape already consumed by a previous backward()");
  }
  if (shape_numel(loss.shape) != 1) {
    throw AutodiffError("backward() needs a scalar loss, got shape " +
                        shape_str(loss.shape));
  }
  if (loss.producer != this) {
    throw AutodiffError("loss is not connected to this tape");
  }
  const_cast<detail::ImplBase&>(loss).seed_unit_grad();
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output->has_grad()) continue;
    it->backward();
    it->output->release_grad();
  }
  entries_.clear();
  consumed_ = true;
}

// ---------------------------------------------------------------- tensor

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data,
                            bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data size " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  impl_->data = std::move(data);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool on) {
  if (!is_leaf()) {
    throw AutodiffError("requires_grad can only be set on leaf tensors");
  }
  impl_->requires_grad = on;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(shape(), impl_->data, false);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

// ---------------------------------------------------------------- helpers

namespace {

template <typename T>
using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;

using detail::recording;

template <typename T>
BasicTensor<T> make(Shape shape, std::vector<T> data) {
  return BasicTensor<T>(std::move(shape), std::move(data));
}

template <typename T, typename Fn>
void attach(BasicTensor<T>& out, Fn&& fn) {
  detail::attach_backward(out, std::function<void()>(std::forward<Fn>(fn)));
}

template <typename T>
bool wants(const ImplPtr<T>& p) {
  return p && p->requires_grad;
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, float alpha, const float* a, const float* b,
          float beta, float* c) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(trans_a ? m : k), b,
              static_cast<int>(trans_b ? k : n), beta, c,
              static_cast<int>(n));
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, double alpha, const double* a, const double* b,
          double beta, double* c) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(trans_a ? m : k), b,
              static_cast<int>(trans_b ? k : n), beta, c,
              static_cast<int>(n));
}

// Strides of `in` expressed over the broadcast output shape (0 where the
// input dimension is broadcast).
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t d_in = in.size() - 1 - i;
    const std::size_t d_out = out.size() - 1 - i;
    strides[d_out] = in[d_in] == 1 ? 0 : stride;
    stride *= in[d_in];
  }
  return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " +
                       shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Calls f(i_out, i_a, i_b) for every output element.
template <typename F>
void broadcast_for_each(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t n = shape_numel(out);
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Binary elementwise op. `fwd(x, y)`; `da(x, y, z)` and `db(x, y, z)` are the
// partial derivatives given inputs and output.
template <typename T, typename Fwd, typename DA, typename DB>
BasicTensor<T> binary(const BasicTensor<T>& a, const BasicTensor<T>& b,
                      const char* name, Fwd fwd, DA da, DB db) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  const bool same = a.shape() == b.shape();
  std::vector<T> out(shape_numel(out_shape));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i], pb[i]);
  } else {
    broadcast_for_each(out_shape, sa, sb,
                       [&](std::size_t i, std::size_t ia, std::size_t ib) {
                         out[i] = fwd(pa[ia], pb[ib]);
                       });
  }
  BasicTensor<T> result = make<T>(out_shape, std::move(out));
  if (recording<T>({&a, &b})) {
    ImplPtr<T> ia = a.impl(), ib = b.impl(), io = result.impl();
    attach(result, [ia, ib, io, sa, sb, same, da, db]() {
      const auto& g = io->grad;
      const auto& z = io->data;
      const T* xa = ia->data.data();
      const T* xb = ib->data.data();
      T* ga = wants<T>(ia) ? ia->grad_buffer().data() : nullptr;
      T* gb = wants<T>(ib) ? ib->grad_buffer().data() : nullptr;
      if (same) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (ga) ga[i] += g[i] * da(xa[i], xb[i], z[i]);
          if (gb) gb[i] += g[i] * db(xa[i], xb[i], z[i]);
        }
      } else {
        broadcast_for_each(io->shape, sa, sb,
                           [&](std::size_t i, std::size_t j, std::size_t k) {
                             if (ga) ga[j] += g[i] * da(xa[j], xb[k], z[i]);
                             if (gb) gb[k] += g[i] * db(xa[j], xb[k], z[i]);
                           });
      }
    });
  }
  return result;
}

// Unary elementwise op; `d(x, y)` is dy/dx.
template <typename T, typename Fwd, typename D>
BasicTensor<T> unary(const BasicTensor<T>& x, Fwd fwd, D d) {
  std::vector<T> out(x.numel());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(px[i]);
  BasicTensor<T> result = make<T>(x.shape(), std::move(out));
  if (recording<T>({&x})) {
    ImplPtr<T> ix = x.impl(), io = result.impl();
    attach(result, [ix, io, d]() {
      auto& gx = ix->grad_buffer();
      const auto& g = io->grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        gx[i] += g[i] * d(ix->data[i], io->data[i]);
      }
    });
  }
  return result;
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; },
      [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; },
      [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; },
      [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(
      a, b, "div", [](T x, T y) { return x / y; },
      [](T, T y, T) { return T(1) / y; },
      [](T, T y, T z) { return -z / y; });
}

template <typename T>
BasicTensor<T> neg(const BasicTensor<T>& x) {
  return scale(x, -1.0);
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, double s) {
  const T k = static_cast<T>(s);
  return unary(
      x, [k](T v) { return k * v; }, [k](T, T) { return k; });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, double s) {
  const T k = static_cast<T>(s);
  return unary(
      x, [k](T v) { return v + k; }, [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& x) {
  return unary(
      x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
BasicTensor<T> sqrt(const BasicTensor<T>& x) {
  return unary(
      x, [](T v) { return std::sqrt(v); },
      [](T, T y) { return T(0.5) / y; });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
  return unary(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x) {
  return unary(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return unary(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& x) {
  return unary(
      x, [](T v) { return std::tanh(v); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return unary(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, double slope) {
  const T k = static_cast<T>(slope);
  return unary(
      x, [k](T v) { return v > T(0) ? v : k * v; },
      [k](T v, T) { return v > T(0) ? T(1) : k; });
}

template <typename T>
BasicTensor<T> clamp_min(const BasicTensor<T>& x, double lo) {
  const T k = static_cast<T>(lo);
  return unary(
      x, [k](T v) { return v > k ? v : k; },
      [k](T v, T) { return v > k ? T(1) : T(0); });
}

// ---------------------------------------------------------------- matmul

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  gemm(false, false, m, n, k, T(1), a.data().data(), b.data().data(), T(0),
       out.data());
  BasicTensor<T> result = make<T>({m, n}, std::move(out));
  if (recording<T>({&a, &b})) {
    ImplPtr<T> ia = a.impl(), ib = b.impl(), io = result.impl();
    attach(result, [ia, ib, io, m, n, k]() {
      const T* g = io->grad.data();
      if (wants<T>(ia)) {
        gemm(false, true, m, k, n, T(1), g, ib->data.data(), T(1),
             ia->grad_buffer().data());
      }
      if (wants<T>(ib)) {
        gemm(true, false, k, n, m, T(1), ia->data.data(), g, T(1),
             ib->grad_buffer().data());
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------- conv

namespace {

struct ConvGeom {
  std::size_t channels, h, w;      // image
  std::size_t kh, kw;
  std::size_t out_h, out_w;        // column grid
  Conv2dParams p;
};

// img (C, H, W) -> col (C*kh*kw, out_h*out_w)
template <typename T>
void im2col(const T* img, const ConvGeom& g, T* col) {
  const std::size_t cols = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.p.stride_h + ki) -
                          static_cast<long>(g.p.pad_h);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.p.stride_w + kj) -
                            static_cast<long>(g.p.pad_w);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w))
                          ? T(0)
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates col into img.
template <typename T>
void col2im(const T* col, const ConvGeom& g, T* img) {
  const std::size_t cols = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.p.stride_h + ki) -
                          static_cast<long>(g.p.pad_h);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          const T* src = row + oy * g.out_w;
          T* dst = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.p.stride_w + kj) -
                            static_cast<long>(g.p.pad_w);
            if (ix >= 0 && ix < static_cast<long>(g.w)) {
              dst[static_cast<std::size_t>(ix)] += src[ox];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void add_channel_bias(T* out, const T* bias, std::size_t channels,
                      std::size_t spatial) {
  for (std::size_t c = 0; c < channels; ++c) {
    T* row = out + c * spatial;
    for (std::size_t i = 0; i < spatial; ++i) row[i] += bias[c];
  }
}

template <typename T>
void accumulate_bias_grad(const T* g, T* gb, std::size_t channels,
                          std::size_t spatial) {
  for (std::size_t c = 0; c < channels; ++c) {
    const T* row = g + c * spatial;
    T acc = T(0);
    for (std::size_t i = 0; i < spatial; ++i) acc += row[i];
    gb[c] += acc;
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, const Conv2dParams& p) {
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) +
                     " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  if (p.stride_h == 0 || p.stride_w == 0) {
    throw ShapeError("conv2d: stride must be positive");
  }
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (h + 2 * p.pad_h < kh || w + 2 * p.pad_w < kw) {
    throw ShapeError("conv2d: kernel " + shape_str(weight.shape()) +
                     " larger than padded input " + shape_str(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != o)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) +
                     " does not match " + std::to_string(o) + " outputs");
  }
  ConvGeom g{c, h, w, kh, kw, (h + 2 * p.pad_h - kh) / p.stride_h + 1,
             (w + 2 * p.pad_w - kw) / p.stride_w + 1, p};
  const std::size_t spatial = g.out_h * g.out_w;
  const std::size_t krows = c * kh * kw;

  std::vector<T> out(n * o * spatial, T(0));
  std::vector<T> col(krows * spatial);
  for (std::size_t b = 0; b < n; ++b) {
    im2col(x.data().data() + b * c * h * w, g, col.data());
    T* dst = out.data() + b * o * spatial;
    gemm(false, false, o, spatial, krows, T(1), weight.data().data(),
         col.data(), T(0), dst);
    if (bias.defined()) add_channel_bias(dst, bias.data().data(), o, spatial);
  }
  BasicTensor<T> result = make<T>({n, o, g.out_h, g.out_w}, std::move(out));
  if (recording<T>({&x, &weight, &bias})) {
    ImplPtr<T> ix = x.impl(), iw = weight.impl(), io = result.impl();
    ImplPtr<T> ib = bias.defined() ? bias.impl() : nullptr;
    attach(result, [ix, iw, ib, io, g, n, o, krows, spatial]() {
      const std::size_t in_sz = g.channels * g.h * g.w;
      std::vector<T> col(krows * spatial);
      std::vector<T> gcol(krows * spatial);
      for (std::size_t b = 0; b < n; ++b) {
        const T* gout = io->grad.data() + b * o * spatial;
        if (wants<T>(iw)) {
          im2col(ix->data.data() + b * in_sz, g, col.data());
          gemm(false, true, o, krows, spatial, T(1), gout, col.data(), T(1),
               iw->grad_buffer().data());
        }
        if (wants<T>(ix)) {
          gemm(true, false, krows, spatial, o, T(1), iw->data.data(), gout,
               T(0), gcol.data());
          col2im(gcol.data(), g, ix->grad_buffer().data() + b * in_sz);
        }
        if (wants<T>(ib)) {
          accumulate_bias_grad(gout, ib->grad_buffer().data(), o, spatial);
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> conv2d_transpose(const BasicTensor<T>& x,
                                const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias,
                                const Conv2dParams& p) {
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(0)) {
    throw ShapeError("conv2d_transpose: input " + shape_str(x.shape()) +
                     " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  if (p.stride_h == 0 || p.stride_w == 0) {
    throw ShapeError("conv2d_transpose: stride must be positive");
  }
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  const long oh = static_cast<long>((h - 1) * p.stride_h + kh) -
                  2 * static_cast<long>(p.pad_h);
  const long ow = static_cast<long>((w - 1) * p.stride_w + kw) -
                  2 * static_cast<long>(p.pad_w);
  if (oh <= 0 || ow <= 0) {
    throw ShapeError("conv2d_transpose: padding leaves no output for input " +
                     shape_str(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != o)) {
    throw ShapeError("conv2d_transpose: bias shape " +
                     shape_str(bias.shape()) + " does not match " +
                     std::to_string(o) + " outputs");
  }
  // The output plays the role of the convolution image; the input grid is
  // the column grid.
  ConvGeom g{o, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow),
             kh, kw, h, w, p};
  const std::size_t in_spatial = h * w;
  const std::size_t out_spatial = g.h * g.w;
  const std::size_t krows = o * kh * kw;

  std::vector<T> out(n * o * out_spatial, T(0));
  std::vector<T> col(krows * in_spatial);
  for (std::size_t b = 0; b < n; ++b) {
    gemm(true, false, krows, in_spatial, c, T(1), weight.data().data(),
         x.data().data() + b * c * in_spatial, T(0), col.data());
    T* dst = out.data() + b * o * out_spatial;
    col2im(col.data(), g, dst);
    if (bias.defined()) {
      add_channel_bias(dst, bias.data().data(), o, out_spatial);
    }
  }
  BasicTensor<T> result = make<T>({n, o, g.h, g.w}, std::move(out));
  if (recording<T>({&x, &weight, &bias})) {
    ImplPtr<T> ix = x.impl(), iw = weight.impl(), io = result.impl();
    ImplPtr<T> ib = bias.defined() ? bias.impl() : nullptr;
    attach(result, [ix, iw, ib, io, g, n, c, krows, in_spatial,
                    out_spatial]() {
      std::vector<T> col(krows * in_spatial);
      for (std::size_t b = 0; b < n; ++b) {
        const T* gout = io->grad.data() + b * g.channels * out_spatial;
        im2col(gout, g, col.data());
        if (wants<T>(ix)) {
          gemm(false, false, c, in_spatial, krows, T(1), iw->data.data(),
               col.data(), T(1),
               ix->grad_buffer().data() + b * c * in_spatial);
        }
        if (wants<T>(iw)) {
          gemm(false, true, c, krows, in_spatial, T(1),
               ix->data.data() + b * c * in_spatial, col.data(), T(1),
               iw->grad_buffer().data());
        }
        if (wants<T>(ib)) {
          accumulate_bias_grad(gout, ib->grad_buffer().data(), g.channels,
                               out_spatial);
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------- shape ops

namespace {

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

}  // namespace

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts,
                      std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) {
      ok = d == axis || s[d] == first[d];
    }
    if (!ok) {
      throw ShapeError("concat: shape " + shape_str(s) +
                       " incompatible with " + shape_str(first) +
                       " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = prod(first, 0, axis);
  const std::size_t inner = prod(first, axis + 1, first.size());
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<T> out(shape_numel(out_shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& t : parts) {
    const std::size_t row = t.dim(axis) * inner;
    const T* src = t.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * row, src + (o + 1) * row,
                out.begin() + static_cast<long>(o * out_row + offset));
    }
    offsets.push_back(offset);
    offset += row;
  }
  BasicTensor<T> result = make<T>(out_shape, std::move(out));
  bool any = false;
  for (const auto& t : parts) any = any || t.requires_grad();
  if (active_tape() && any) {
    std::vector<ImplPtr<T>> ins;
    for (const auto& t : parts) ins.push_back(t.impl());
    ImplPtr<T> io = result.impl();
    attach(result, [ins, io, offsets, outer, inner, out_row, axis]() {
      for (std::size_t k = 0; k < ins.size(); ++k) {
        if (!wants<T>(ins[k])) continue;
        const std::size_t row = ins[k]->shape[axis] * inner;
        auto& gi = ins[k]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = io->grad.data() + o * out_row + offsets[k];
          T* dst = gi.data() + o * row;
          for (std::size_t i = 0; i < row; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::size_t axis,
                     std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  if (axis >= s.size() || start + length > s[axis] || length == 0) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") on axis " +
                     std::to_string(axis) + " invalid for " + shape_str(s));
  }
  Shape out_shape = s;
  out_shape[axis] = length;
  const std::size_t outer = prod(s, 0, axis);
  const std::size_t inner = prod(s, axis + 1, s.size());
  const std::size_t in_row = s[axis] * inner;
  const std::size_t row = length * inner;
  const std::size_t off = start * inner;
  std::vector<T> out(outer * row);
  const T* src = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(src + o * in_row + off, src + o * in_row + off + row,
              out.begin() + static_cast<long>(o * row));
  }
  BasicTensor<T> result = make<T>(out_shape, std::move(out));
  if (recording<T>({&x})) {
    ImplPtr<T> ix = x.impl(), io = result.impl();
    attach(result, [ix, io, outer, in_row, row, off]() {
      auto& gx = ix->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        const T* g = io->grad.data() + o * row;
        T* dst = gx.data() + o * in_row + off;
        for (std::size_t i = 0; i < row; ++i) dst[i] += g[i];
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  BasicTensor<T> result = make<T>(std::move(shape),
                                  std::vector<T>(x.data().begin(),
                                                 x.data().end()));
  if (recording<T>({&x})) {
    ImplPtr<T> ix = x.impl(), io = result.impl();
    attach(result, [ix, io]() {
      auto& gx = ix->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += io->grad[i];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x,
                       const std::vector<std::size_t>& order) {
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  std::vector<bool> seen(r, false);
  bool ok = order.size() == r;
  for (std::size_t i = 0; ok && i < r; ++i) {
    ok = order[i] < r && !seen[order[i]];
    if (ok) seen[order[i]] = true;
  }
  if (!ok) throw ShapeError("permute: invalid order for " + shape_str(s));

  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t d = r; d-- > 1;) in_strides[d - 1] = in_strides[d] * s[d];
  Shape out_shape(r);
  std::vector<std::size_t> strides(r);  // input stride for each output dim
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = s[order[i]];
    strides[i] = in_strides[order[i]];
  }
  std::vector<std::size_t> gather(x.numel());
  const std::vector<std::size_t> zero(r, 0);
  broadcast_for_each(out_shape, strides, zero,
                     [&](std::size_t i, std::size_t j, std::size_t) {
                       gather[i] = j;
                     });
  std::vector<T> out(x.numel());
  const T* src = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = src[gather[i]];
  BasicTensor<T> result = make<T>(out_shape, std::move(out));
  if (recording<T>({&x})) {
    ImplPtr<T> ix = x.impl(), io = result.impl();
    attach(result, [ix, io, gather = std::move(gather)]() {
      auto& gx = ix->grad_buffer();
      for (std::size_t i = 0; i < gather.size(); ++i) {
        gx[gather[i]] += io->grad[i];
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------- reductions

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  BasicTensor<T> result = make<T>({1}, {static_cast<T>(acc)});
  if (recording<T>({&x})) {
    ImplPtr<T> ix = x.impl(), io = result.impl();
    attach(result, [ix, io]() {
      auto& gx = ix->grad_buffer();
      const T g = io->grad[0];
      for (auto& v : gx) v += g;
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw ShapeError("sum: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(s));
  }
  const std::size_t outer = prod(s, 0, axis);
  const std::size_t len = s[axis];
  const std::size_t inner = prod(s, axis + 1, s.size());
  Shape out_shape;
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (d != axis) out_shape.push_back(s[d]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<T> out(outer * inner, T(0));
  const T* src = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < len; ++k) {
      const T* row = src + (o * len + k) * inner;
      T* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += row[i];
    }
  }
  BasicTensor<T> result = make<T>(out_shape, std::move(out));
  if (recording<T>({&x})) {
    ImplPtr<T> ix = x.impl(), io = result.impl();
    attach(result, [ix, io, outer, len, inner]() {
      auto& gx = ix->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        const T* g = io->grad.data() + o * inner;
        for (std::size_t k = 0; k < len; ++k) {
          T* dst = gx.data() + (o * len + k) * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x) {
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  std::vector<T> out(x.numel());
  const T* src = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = src + r * cols;
    T* y = out.data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(in[c] - mx);
      z += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] = static_cast<T>(y[c] / z);
  }
  BasicTensor<T> result = make<T>(x.shape(), std::move(out));
  if (recording<T>({&x})) {
    ImplPtr<T> ix = x.impl(), io = result.impl();
    attach(result, [ix, io, rows, cols]() {
      auto& gx = ix->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = io->data.data() + r * cols;
        const T* g = io->grad.data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
        for (std::size_t c = 0; c < cols; ++c) {
          gx[r * cols + c] += y[c] * (g[c] - static_cast<T>(dot));
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> standardize_rows(const BasicTensor<T>& x, double eps) {
  if (x.rank() != 2) {
    throw ShapeError("standardize_rows: expected 2-D input, got " +
                     shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(x.numel());
  std::vector<T> inv_std(rows);
  const T* src = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = src + r * cols;
    double m = 0.0;
    for (std::size_t c = 0; c < cols; ++c) m += in[c];
    m /= static_cast<double>(cols);
    double v = 0.0;
    for (std::size_t c = 0; c < cols; ++c) v += (in[c] - m) * (in[c] - m);
    v /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(v + eps);
    inv_std[r] = static_cast<T>(is);
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = static_cast<T>((in[c] - m) * is);
    }
  }
  BasicTensor<T> result = make<T>(x.shape(), std::move(out));
  if (recording<T>({&x})) {
    ImplPtr<T> ix = x.impl(), io = result.impl();
    attach(result, [ix, io, rows, cols, inv_std = std::move(inv_std)]() {
      auto& gx = ix->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = io->data.data() + r * cols;
        const T* g = io->grad.data() + r * cols;
        double gm = 0.0, gym = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          gm += g[c];
          gym += static_cast<double>(g[c]) * y[c];
        }
        gm /= static_cast<double>(cols);
        gym /= static_cast<double>(cols);
        for (std::size_t c = 0; c < cols; ++c) {
          gx[r * cols + c] +=
              static_cast<T>(inv_std[r] * (g[c] - gm - y[c] * gym));
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------- training

template <typename T>
void backward(const BasicTensor<T>& loss) {
  Tape* tape = active_tape();
  if (tape == nullptr) {
    throw AutodiffError("backward() called with no active tape");
  }
  tape->backward(*loss.impl());
}

template <typename T>
GradCheckResult grad_check(const std::function<BasicTensor<T>()>& f,
                           std::vector<BasicTensor<T>> params,
                           const GradCheckOptions& opts) {
  std::vector<bool> saved_flags;
  for (auto& p : params) {
    saved_flags.push_back(p.requires_grad());
    p.set_requires_grad(true);
    p.impl()->release_grad();
  }

  std::vector<std::vector<T>> analytic(params.size());
  {
    Tape tape;
    TapeScope scope(tape);
    BasicTensor<T> y = f();
    if (y.numel() != 1) {
      throw AutodiffError("grad_check: f must return a scalar, got " +
                          shape_str(y.shape()));
    }
    // A loss that never touched the parameters has zero gradient.
    if (y.impl()->producer == &tape) tape.backward(*y.impl());
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    analytic[k] = params[k].has_grad()
                      ? std::vector<T>(params[k].grad().begin(),
                                       params[k].grad().end())
                      : std::vector<T>(params[k].numel(), T(0));
    params[k].impl()->release_grad();
  }

  GradCheckResult res;
  NoGradScope no_grad;
  Rng rng(opts.seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].data();
    std::vector<std::size_t> coords;
    if (opts.max_coords_per_tensor == 0 ||
        opts.max_coords_per_tensor >= data.size()) {
      coords.resize(data.size());
      std::iota(coords.begin(), coords.end(), std::size_t{0});
    } else {
      for (std::size_t i = 0; i < opts.max_coords_per_tensor; ++i) {
        coords.push_back(rng.uniform_int(data.size()));
      }
    }
    std::vector<double> numerics;
    numerics.reserve(coords.size());
    double scale = 1e-8;
    for (std::size_t idx : coords) {
      const T orig = data[idx];
      // Divide by the step actually representable in T, not the nominal one.
      const T hi = static_cast<T>(orig + opts.eps);
      const T lo = static_cast<T>(orig - opts.eps);
      data[idx] = hi;
      const double fp = f().item();
      data[idx] = lo;
      const double fm = f().item();
      data[idx] = orig;
      numerics.push_back((fp - fm) /
                         (static_cast<double>(hi) - static_cast<double>(lo)));
      scale = std::max({scale, std::abs(static_cast<double>(analytic[k][idx])),
                        std::abs(numerics.back())});
    }
    for (std::size_t c = 0; c < coords.size(); ++c) {
      const std::size_t idx = coords[c];
      const double numeric = numerics[c];
      const double a = analytic[k][idx];
      const double denom =
          opts.normwise ? scale
                        : std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      if (res.coords_checked++ == 0 || err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_tensor = k;
        res.worst_index = idx;
        res.analytic = a;
        res.numeric = numeric;
      }
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k].set_requires_grad(saved_flags[k]);
  }
  return res;
}

template <typename T>
double grad_check(
    const std::function<BasicTensor<T>(const BasicTensor<T>&)>& f,
    const BasicTensor<T>& x, double eps) {
  BasicTensor<T> leaf = x.detach();
  GradCheckOptions opts;
  opts.eps = eps;
  return grad_check<T>([&]() { return f(leaf); }, {leaf}, opts)
      .max_rel_error;
}

template <typename T>
void sgd_step(std::span<BasicTensor<T>> params, double lr) {
  for (auto& p : params) {
    if (!p.has_grad()) {
      throw AutodiffError("sgd_step: parameter of shape " +
                          shape_str(p.shape()) + " has no gradient");
    }
  }
  const T step = static_cast<T>(lr);
  for (auto& p : params) {
    auto data = p.data();
    auto grad = p.mutable_grad();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= step * grad[i];
    p.zero_grad();
  }
}

template <typename T>
double clip_grad_norm(std::span<BasicTensor<T>> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (T g : p.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T k = static_cast<T>(max_norm / norm);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g *= k;
    }
  }
  return norm;
}

// ---------------------------------------------------------------- instances

#define DUOVOCE_INSTANTIATE(T)                                                \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);  \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);  \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);  \
  template BasicTensor<T> div(const BasicTensor<T>&, const BasicTensor<T>&);  \
  template BasicTensor<T> neg(const BasicTensor<T>&);                         \
  template BasicTensor<T> scale(const BasicTensor<T>&, double);               \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, double);          \
  template BasicTensor<T> square(const BasicTensor<T>&);                      \
  template BasicTensor<T> sqrt(const BasicTensor<T>&);                        \
  template BasicTensor<T> exp(const BasicTensor<T>&);                         \
  template BasicTensor<T> log(const BasicTensor<T>&);                         \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                     \
  template BasicTensor<T> tanh(const BasicTensor<T>&);                        \
  template BasicTensor<T> relu(const BasicTensor<T>&);                        \
  template BasicTensor<T> leaky_relu(const BasicTensor<T>&, double);          \
  template BasicTensor<T> clamp_min(const BasicTensor<T>&, double);           \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, \
                                 const BasicTensor<T>&, const Conv2dParams&); \
  template BasicTensor<T> conv2d_transpose(                                   \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,    \
      const Conv2dParams&);                                                   \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&,          \
                                 std::size_t);                                \
  template BasicTensor<T> slice(const BasicTensor<T>&, std::size_t,           \
                                std::size_t, std::size_t);                    \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);              \
  template BasicTensor<T> permute(const BasicTensor<T>&,                      \
                                  const std::vector<std::size_t>&);           \
  template BasicTensor<T> sum(const BasicTensor<T>&);                         \
  template BasicTensor<T> sum(const BasicTensor<T>&, std::size_t);            \
  template BasicTensor<T> mean(const BasicTensor<T>&);                        \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                     \
  template BasicTensor<T> standardize_rows(const BasicTensor<T>&, double);    \
  template void backward(const BasicTensor<T>&);                              \
  template GradCheckResult grad_check(                                        \
      const std::function<BasicTensor<T>()>&, std::vector<BasicTensor<T>>,    \
      const GradCheckOptions&);                                               \
  template double grad_check(                                                 \
      const std::function<BasicTensor<T>(const BasicTensor<T>&)>&,            \
      const BasicTensor<T>&, double);                                         \
  template void sgd_step(std::span<BasicTensor<T>>, double);                  \
  template double clip_grad_norm(std::span<BasicTensor<T>>, double);

DUOVOCE_INSTANTIATE(float)
DUOVOCE_INSTANTIATE(double)

#undef DUOVOCE_INSTANTIATE

}  // namespace duovoce
