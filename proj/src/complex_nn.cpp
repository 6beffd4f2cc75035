// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "duovoce/complex_nn.hpp"

#include <cmath>

namespace duovoce {

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape), 0.0f, true);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f, true); }

template <typename T>
void check_pair(const BasicComplexTensor<T>& x, const char* what) {
  if (!x.re.defined() || !x.im.defined() || x.re.shape() != x.im.shape()) {
    throw ShapeError(std::string(what) + ": real/imag parts differ in shape");
  }
}

template <typename T>
BasicTensor<T> cat_bias(const BasicTensor<T>& b_re, const BasicTensor<T>& b_im) {
  if (!b_re.defined()) return {};
  return concat<T>({b_re, b_im}, 0);
}

template <typename T>
BasicComplexTensor<T> split_channels(const BasicTensor<T>& y, std::size_t axis) {
  const std::size_t half = y.dim(axis) / 2;
  return {slice(y, axis, 0, half), slice(y, axis, half, half)};
}

}  // namespace

std::size_t count_params(const ParamMap<float>& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

void init_complex_conv(ParamMap<float>& params, const std::string& prefix,
                       std::size_t in, std::size_t out, std::size_t kh,
                       std::size_t kw, bool transpose, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kh * kw));
  const Shape w = transpose ? Shape{in, out, kh, kw} : Shape{out, in, kh, kw};
  params[prefix + ".W_re"] = uniform_tensor(w, bound, rng);
  params[prefix + ".W_im"] = uniform_tensor(w, bound, rng);
  params[prefix + ".b_re"] = zeros({out});
  params[prefix + ".b_im"] = zeros({out});
}

void init_complex_lstm(ParamMap<float>& params, const std::string& prefix,
                       std::size_t in, std::size_t hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (const char* part : {".real", ".imag"}) {
    const std::string p = prefix + part;
    params[p + ".W_ih"] = uniform_tensor({in, 4 * hidden}, bound, rng);
    params[p + ".W_hh"] = uniform_tensor({hidden, 4 * hidden}, bound, rng);
    params[p + ".b"] = zeros({4 * hidden});
  }
}

void init_complex_dense(ParamMap<float>& params, const std::string& prefix,
                        std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  params[prefix + ".W_re"] = uniform_tensor({in, out}, bound, rng);
  params[prefix + ".W_im"] = uniform_tensor({in, out}, bound, rng);
  params[prefix + ".b_re"] = zeros({out});
  params[prefix + ".b_im"] = zeros({out});
}

template <typename T>
ComplexConvLayer<T> bind_complex_conv(const ParamMap<T>& params,
                                      const std::string& prefix,
                                      const Conv2dParams& geom) {
  return {params.at(prefix + ".W_re"), params.at(prefix + ".W_im"),
          params.at(prefix + ".b_re"), params.at(prefix + ".b_im"), geom};
}

template <typename T>
ComplexLstmLayer<T> bind_complex_lstm(const ParamMap<T>& params,
                                      const std::string& prefix) {
  auto one = [&](const std::string& p) {
    return LstmWeights<T>{params.at(p + ".W_ih"), params.at(p + ".W_hh"),
                          params.at(p + ".b")};
  };
  return {one(prefix + ".real"), one(prefix + ".imag")};
}

template <typename T>
ComplexDenseLayer<T> bind_complex_dense(const ParamMap<T>& params,
                                        const std::string& prefix) {
  return {params.at(prefix + ".W_re"), params.at(prefix + ".W_im"),
          params.at(prefix + ".b_re"), params.at(prefix + ".b_im")};
}

// Stacking [re; im] along channels turns the complex conv into one real conv
// with block weight [[Wr, -Wi], [Wi, Wr]].
template <typename T>
BasicComplexTensor<T> complex_conv2d(const BasicComplexTensor<T>& x,
                                     const ComplexConvLayer<T>& layer) {
  check_pair(x, "complex_conv2d");
  const auto& wr = layer.w_re;
  const auto& wi = layer.w_im;
  const auto w = concat<T>({concat<T>({wr, neg(wi)}, 1), concat<T>({wi, wr}, 1)}, 0);
  const auto y = conv2d(concat<T>({x.re, x.im}, 1), w,
                        cat_bias(layer.b_re, layer.b_im), layer.geom);
  return split_channels(y, 1);
}

// Weight layout (in, out, ...) makes the block [[Wr, Wi], [-Wi, Wr]].
template <typename T>
BasicComplexTensor<T> complex_conv2d_transpose(
    const BasicComplexTensor<T>& x, const ComplexConvLayer<T>& layer) {
  check_pair(x, "complex_conv2d_transpose");
  const auto& wr = layer.w_re;
  const auto& wi = layer.w_im;
  const auto w = concat<T>({concat<T>({wr, wi}, 1), concat<T>({neg(wi), wr}, 1)}, 0);
  const auto y = conv2d_transpose(concat<T>({x.re, x.im}, 1), w,
                                  cat_bias(layer.b_re, layer.b_im), layer.geom);
  return split_channels(y, 1);
}

template <typename T>
BasicTensor<T> lstm(const BasicTensor<T>& x, const LstmWeights<T>& w) {
  if (x.rank() != 3) {
    throw ShapeError("lstm: expected (steps, batch, in), got " +
                     shape_str(x.shape()));
  }
  const std::size_t steps = x.dim(0);
  const std::size_t batch = x.dim(1);
  const std::size_t h = w.hidden();
  if (steps == 0) throw ShapeError("lstm: empty sequence");
  if (w.w_ih.rank() != 2 || w.w_ih.dim(0) != x.dim(2) ||
      w.w_ih.dim(1) != 4 * h || w.bias.numel() != 4 * h) {
    throw ShapeError("lstm: weight shapes do not match input " +
                     shape_str(x.shape()));
  }
  // Input projection for all steps in one matmul.
  const auto xw =
      add(matmul(reshape(x, {steps * batch, x.dim(2)}), w.w_ih), w.bias);

  BasicTensor<T> hs, cs;
  std::vector<BasicTensor<T>> outs;
  outs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    auto gates = slice(xw, 0, t * batch, batch);
    if (t > 0) gates = add(gates, matmul(hs, w.w_hh));
    const auto i = sigmoid(slice(gates, 1, 0, h));
    const auto f = sigmoid(slice(gates, 1, h, h));
    const auto g = tanh(slice(gates, 1, 2 * h, h));
    const auto o = sigmoid(slice(gates, 1, 3 * h, h));
    cs = t > 0 ? add(mul(f, cs), mul(i, g)) : mul(i, g);
    hs = mul(o, tanh(cs));
    outs.push_back(hs);
  }
  return reshape(concat(outs, 0), {steps, batch, h});
}

template <typename T>
BasicComplexTensor<T> complex_lstm(const BasicComplexTensor<T>& x,
                                   const ComplexLstmLayer<T>& layer) {
  check_pair(x, "complex_lstm");
  const std::size_t batch = x.re.dim(1);
  // Both parts share each real LSTM, so run them as one doubled batch.
  const auto stacked = concat<T>({x.re, x.im}, 1);
  const auto r = lstm(stacked, layer.real);
  const auto i = lstm(stacked, layer.imag);
  const auto f_rr = slice(r, 1, 0, batch);
  const auto f_ir = slice(r, 1, batch, batch);
  const auto f_ri = slice(i, 1, 0, batch);
  const auto f_ii = slice(i, 1, batch, batch);
  return {sub(f_rr, f_ii), add(f_ri, f_ir)};
}

template <typename T>
BasicComplexTensor<T> complex_dense(const BasicComplexTensor<T>& x,
                                    const ComplexDenseLayer<T>& layer) {
  check_pair(x, "complex_dense");
  if (x.re.rank() != 2) {
    throw ShapeError("complex_dense: expected (N, in), got " +
                     shape_str(x.re.shape()));
  }
  const auto& wr = layer.w_re;
  const auto& wi = layer.w_im;
  const auto w = concat<T>({concat<T>({wr, wi}, 1), concat<T>({neg(wi), wr}, 1)}, 0);
  const auto y = add(matmul(concat<T>({x.re, x.im}, 1), w),
                     concat<T>({layer.b_re, layer.b_im}, 0));
  return split_channels(y, 1);
}

template <typename T>
BasicComplexTensor<T> complex_norm(const BasicComplexTensor<T>& x, double eps) {
  check_pair(x, "complex_norm");
  if (x.re.rank() != 4) {
    throw ShapeError("complex_norm: expected (N, C, H, W), got " +
                     shape_str(x.re.shape()));
  }
  const std::size_t n = x.re.dim(0), c = x.re.dim(1);
  const std::size_t h = x.re.dim(2), w = x.re.dim(3);
  // Concatenating along H keeps each (sample, channel) block contiguous.
  const auto joined = concat<T>({x.re, x.im}, 2);
  const auto rows = standardize_rows(reshape(joined, {n * c, 2 * h * w}), eps);
  return split_channels(reshape(rows, {n, c, 2 * h, w}), 2);
}

template <typename T>
BasicComplexTensor<T> complex_leaky_relu(const BasicComplexTensor<T>& x,
                                         double slope) {
  return {leaky_relu(x.re, slope), leaky_relu(x.im, slope)};
}

#define DUOVOCE_INSTANTIATE(T)                                                \
  template ComplexConvLayer<T> bind_complex_conv(                             \
      const ParamMap<T>&, const std::string&, const Conv2dParams&);           \
  template ComplexLstmLayer<T> bind_complex_lstm(const ParamMap<T>&,          \
                                                 const std::string&);         \
  template ComplexDenseLayer<T> bind_complex_dense(const ParamMap<T>&,        \
                                                   const std::string&);       \
  template BasicComplexTensor<T> complex_conv2d(const BasicComplexTensor<T>&, \
                                                const ComplexConvLayer<T>&);  \
  template BasicComplexTensor<T> complex_conv2d_transpose(                    \
      const BasicComplexTensor<T>&, const ComplexConvLayer<T>&);              \
  template BasicTensor<T> lstm(const BasicTensor<T>&, const LstmWeights<T>&); \
  template BasicComplexTensor<T> complex_lstm(const BasicComplexTensor<T>&,   \
                                              const ComplexLstmLayer<T>&);    \
  template BasicComplexTensor<T> complex_dense(const BasicComplexTensor<T>&,  \
                                               const ComplexDenseLayer<T>&);  \
  template BasicComplexTensor<T> complex_norm(const BasicComplexTensor<T>&,   \
                                              double);                        \
  template BasicComplexTensor<T> complex_leaky_relu(                          \
      const BasicComplexTensor<T>&, double);

DUOVOCE_INSTANTIATE(float)
DUOVOCE_INSTANTIATE(double)

#undef DUOVOCE_INSTANTIATE

}  // namespace duovoce
