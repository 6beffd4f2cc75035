// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Complex-valued layers built from real tensor ops. A complex tensor is a
// pair of equally shaped real tensors; every layer implements the complex
// product (a + ib)(c + id) = (ac - bd) + i(ad + bc) on its weights.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "duovoce/random.hpp"
#include "duovoce/tensor.hpp"

namespace duovoce {

template <typename T>
struct BasicComplexTensor {
  BasicTensor<T> re;
  BasicTensor<T> im;

  const Shape& shape() const { return re.shape(); }
};

using ComplexTensor = BasicComplexTensor<float>;

template <typename T>
using ParamMap = std::map<std::string, BasicTensor<T>>;

template <typename T>
ParamMap<T> cast_params(const ParamMap<float>& params) {
  ParamMap<T> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<T>());
  return out;
}

std::size_t count_params(const ParamMap<float>& params);

// Weights (out, in, kh, kw) for convolution, (in, out, kh, kw) for the
// transposed variant. Biases (out); undefined tensors mean "no bias".
template <typename T>
struct ComplexConvLayer {
  BasicTensor<T> w_re, w_im;
  BasicTensor<T> b_re, b_im;
  Conv2dParams geom;
};

// Gate order i, f, g, o. w_ih: (in, 4h), w_hh: (h, 4h), bias: (4h).
template <typename T>
struct LstmWeights {
  BasicTensor<T> w_ih, w_hh, bias;

  std::size_t hidden() const { return w_hh.dim(0); }
};

// Two real LSTMs combined by the complex product rule.
template <typename T>
struct ComplexLstmLayer {
  LstmWeights<T> real;
  LstmWeights<T> imag;
};

// w: (in, out), b: (out).
template <typename T>
struct ComplexDenseLayer {
  BasicTensor<T> w_re, w_im;
  BasicTensor<T> b_re, b_im;
};

// ----------------------------------------------------------- parameter setup

// Each init_* draws weights uniformly in +-1/sqrt(fan_in), zero biases, and
// stores them in `params` under "<prefix>.<name>".
void init_complex_conv(ParamMap<float>& params, const std::string& prefix,
                       std::size_t in, std::size_t out, std::size_t kh,
                       std::size_t kw, bool transpose, Rng& rng);
void init_complex_lstm(ParamMap<float>& params, const std::string& prefix,
                       std::size_t in, std::size_t hidden, Rng& rng);
void init_complex_dense(ParamMap<float>& params, const std::string& prefix,
                        std::size_t in, std::size_t out, Rng& rng);

// Look up layers by prefix. Throws std::out_of_range for a missing tensor.
template <typename T>
ComplexConvLayer<T> bind_complex_conv(const ParamMap<T>& params,
                                      const std::string& prefix,
                                      const Conv2dParams& geom);
template <typename T>
ComplexLstmLayer<T> bind_complex_lstm(const ParamMap<T>& params,
                                      const std::string& prefix);
template <typename T>
ComplexDenseLayer<T> bind_complex_dense(const ParamMap<T>& params,
                                        const std::string& prefix);

// ----------------------------------------------------------------- layers

// x: (N, in, H, W) complex.
template <typename T>
BasicComplexTensor<T> complex_conv2d(const BasicComplexTensor<T>& x,
                                     const ComplexConvLayer<T>& layer);
template <typename T>
BasicComplexTensor<T> complex_conv2d_transpose(
    const BasicComplexTensor<T>& x, const ComplexConvLayer<T>& layer);

// Real LSTM over x: (steps, batch, in) -> (steps, batch, hidden), zero
// initial state.
template <typename T>
BasicTensor<T> lstm(const BasicTensor<T>& x, const LstmWeights<T>& w);
// Complex LSTM over (steps, batch, in) -> (steps, batch, hidden).
template <typename T>
BasicComplexTensor<T> complex_lstm(const BasicComplexTensor<T>& x,
                                   const ComplexLstmLayer<T>& layer);

// x: (N, in) -> (N, out).
template <typename T>
BasicComplexTensor<T> complex_dense(const BasicComplexTensor<T>& x,
                                    const ComplexDenseLayer<T>& layer);

inline constexpr double kComplexNormEps = 1e-5;

// x: (N, C, H, W). Standardizes each (sample, channel) using the mean and
// variance of its real and imaginary values pooled together; both parts are
// shifted and scaled identically.
template <typename T>
BasicComplexTensor<T> complex_norm(const BasicComplexTensor<T>& x,
                                   double eps = kComplexNormEps);

template <typename T>
BasicComplexTensor<T> complex_leaky_relu(const BasicComplexTensor<T>& x,
                                         double slope);

}  // namespace duovoce
