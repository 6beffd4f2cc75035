// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "duovoce/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "duovoce/random.hpp"

namespace duovoce {

namespace {

// The floor keeps near-silent bins from dominating the features, so faint
// noise barely moves the states. The affine map centers the result.
constexpr double kMelFloor = 1e-2;
constexpr double kMelShift = 1.0;
constexpr double kMelScale = 0.5;

constexpr double kEmbedGain = 0.2;
constexpr double kStateGain = 2.0;
constexpr double kOutGain = 3.0;

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(stddev * rng.normal());
  return t;
}

template <typename T>
BasicTensor<T> as(const Tensor& t) {
  if constexpr (std::is_same_v<T, float>) {
    return t;
  } else {
    return t.cast<T>();
  }
}

const Conv2dParams kHalve{1, 2, 0, 1};

}  // namespace

StubTeacher::StubTeacher(const TeacherConfig& cfg) : cfg_(cfg) {
  if (cfg.vocab < 2 || cfg.dim == 0 || cfg.token_span == 0) {
    throw std::invalid_argument("teacher: vocab >= 2, dim > 0, token_span > 0");
  }
  validate(cfg.stft);
  filterbank_t_ = filterbank_tensor<float>(cfg.mel, cfg.stft.fft_size);
  Rng rng(derive_seed(cfg.seed, "teacher"));
  const std::size_t m = cfg.mel.n_mels, d = cfg.dim, v = cfg.vocab;
  conv1_w_ = normal_tensor({d, m, 1, 3}, 1.0 / std::sqrt(3.0 * m), rng);
  conv1_b_ = Tensor(Shape{d});
  conv2_w_ = normal_tensor({d, d, 1, 3}, 1.5 / std::sqrt(3.0 * d), rng);
  conv2_b_ = Tensor(Shape{d});
  embed_ = normal_tensor({v + 1, d}, kEmbedGain, rng);
  state_w_ = normal_tensor({d, d}, kStateGain / std::sqrt(double(d)), rng);
  state_b_ = Tensor(Shape{d});
  out_w_ = normal_tensor({d, v}, kOutGain / std::sqrt(double(d)), rng);
  out_b_ = Tensor(Shape{v});
}

std::size_t StubTeacher::state_frames(std::size_t signal_length) const {
  const std::size_t frames = stft_frame_count(signal_length, cfg_.stft);
  const std::size_t half = (frames + 1) / 2;
  return (half + 1) / 2;
}

std::size_t StubTeacher::token_count(std::size_t state_frames) const {
  return std::max<std::size_t>(
      1, (state_frames + cfg_.token_span - 1) / cfg_.token_span);
}

template <typename T>
BasicTensor<T> StubTeacher::encode(const BasicTensor<T>& waves) const {
  const std::size_t batch = waves.dim(0);
  const auto spec = stft(waves, cfg_.stft);
  auto x = log_mel(spec, as<T>(filterbank_t_), kMelFloor);  // (B, frames, mels)
  const std::size_t frames = x.dim(1), mels = x.dim(2);
  x = scale(add_scalar(x, kMelShift), kMelScale);
  x = reshape(permute(x, {0, 2, 1}), {batch, mels, 1, frames});
  x = tanh(conv2d(x, as<T>(conv1_w_), as<T>(conv1_b_), kHalve));
  x = tanh(conv2d(x, as<T>(conv2_w_), as<T>(conv2_b_), kHalve));
  const std::size_t states = x.dim(3);
  return permute(reshape(x, {batch, cfg_.dim, states}), {0, 2, 1});
}

template <typename T>
BasicTensor<T> StubTeacher::decode(const BasicTensor<T>& states,
                                   const TokenBatch& prefix) const {
  if (states.rank() != 3 || states.dim(2) != cfg_.dim) {
    throw ShapeError("teacher decode: expected (B, S, " +
                     std::to_string(cfg_.dim) + "), got " +
                     shape_str(states.shape()));
  }
  const std::size_t batch = states.dim(0), s = states.dim(1), d = cfg_.dim;
  const std::size_t n = token_count(s);
  if (prefix.size() != batch) {
    throw std::invalid_argument("teacher decode: prefix batch size mismatch");
  }

  // Mean pooling over each token's span as one (N x S) matrix.
  BasicTensor<T> pool(Shape{n, s});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i * cfg_.token_span;
    const std::size_t hi = std::min(s, lo + cfg_.token_span);
    for (std::size_t j = lo; j < hi; ++j) {
      pool.data()[i * s + j] = T(1) / static_cast<T>(hi - lo);
    }
  }
  auto pooled = matmul(pool, reshape(permute(states, {1, 0, 2}), {s, batch * d}));
  pooled = reshape(permute(reshape(pooled, {n, batch, d}), {1, 0, 2}),
                   {batch * n, d});

  BasicTensor<T> emb(Shape{batch * n, d});
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& row = prefix[b];
    if (row.size() + 1 < n || row.size() > n) {
      throw std::invalid_argument("teacher decode: prefix of " +
                                  std::to_string(row.size()) + " tokens for " +
                                  std::to_string(n) + " positions");
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t tok = cfg_.vocab;  // BOS
      if (i > 0) {
        const int y = row[i - 1];
        if (y < 0 || static_cast<std::size_t>(y) >= cfg_.vocab) {
          throw std::invalid_argument("teacher decode: token id " +
                                      std::to_string(y) + " outside vocabulary");
        }
        tok = static_cast<std::size_t>(y);
      }
      for (std::size_t k = 0; k < d; ++k) {
        emb.data()[(b * n + i) * d + k] =
            static_cast<T>(embed_.data()[tok * d + k]);
      }
    }
  }
  const auto h = tanh(add(add(matmul(pooled, as<T>(state_w_)), emb),
                          as<T>(state_b_)));
  const auto logits = add(matmul(h, as<T>(out_w_)), as<T>(out_b_));
  return reshape(softmax(logits), {batch, n, cfg_.vocab});
}

TokenBatch StubTeacher::greedy(const Tensor& states) const {
  const std::size_t batch = states.dim(0), s = states.dim(1);
  const std::size_t n = token_count(s), d = cfg_.dim, v = cfg_.vocab;
  TokenBatch out(batch);
  std::vector<double> pooled(d), h(d);
  for (std::size_t b = 0; b < batch; ++b) {
    int prev = static_cast<int>(v);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t lo = i * cfg_.token_span;
      const std::size_t hi = std::min(s, lo + cfg_.token_span);
      std::fill(pooled.begin(), pooled.end(), 0.0);
      for (std::size_t j = lo; j < hi; ++j) {
        for (std::size_t k = 0; k < d; ++k) {
          pooled[k] += states.data()[(b * s + j) * d + k];
        }
      }
      for (auto& p : pooled) p /= static_cast<double>(hi - lo);
      for (std::size_t k = 0; k < d; ++k) {
        double acc = state_b_.data()[k] + embed_.data()[prev * d + k];
        for (std::size_t j = 0; j < d; ++j) {
          acc += pooled[j] * state_w_.data()[j * d + k];
        }
        h[k] = std::tanh(acc);
      }
      int best = 0;
      double best_logit = -1e300;
      for (std::size_t t = 0; t < v; ++t) {
        double acc = out_b_.data()[t];
        for (std::size_t k = 0; k < d; ++k) acc += h[k] * out_w_.data()[k * v + t];
        if (acc > best_logit) {
          best_logit = acc;
          best = static_cast<int>(t);
        }
      }
      out[b].push_back(best);
      prev = best;
    }
  }
  return out;
}

TeacherStates StubTeacher::encode(const Waveform& w) const {
  require_canonical_rate(w);
  NoGradScope no_grad;
  const auto states = encode(Tensor(Shape{1, w.size()}, w.samples));
  TeacherStates out{Matrix(states.dim(1), states.dim(2))};
  std::copy(states.data().begin(), states.data().end(), out.hidden.data.begin());
  return out;
}

TokenDistribution StubTeacher::decode(const TeacherStates& states,
                                      const PseudoLabels& prefix) const {
  NoGradScope no_grad;
  const Tensor st(Shape{1, states.hidden.rows, states.hidden.cols},
                  states.hidden.data);
  const auto probs = decode(st, TokenBatch{prefix.tokens});
  TokenDistribution out{probs.dim(1), probs.dim(2), {}};
  out.probs.assign(probs.data().begin(), probs.data().end());
  return out;
}

PseudoLabels StubTeacher::transcribe(const Waveform& w) const {
  const auto st = encode(w);
  const Tensor states(Shape{1, st.hidden.rows, st.hidden.cols}, st.hidden.data);
  return {greedy(states)[0]};
}

std::vector<int> spell(const std::vector<int>& tokens) {
  std::vector<int> out;
  out.reserve(tokens.size() * 2);
  for (int t : tokens) {
    out.push_back(t / 8);
    out.push_back(t % 8);
  }
  return out;
}

template BasicTensor<float> StubTeacher::encode(const BasicTensor<float>&) const;
template BasicTensor<double> StubTeacher::encode(const BasicTensor<double>&) const;
template BasicTensor<float> StubTeacher::decode(const BasicTensor<float>&,
                                                const TokenBatch&) const;
template BasicTensor<double> StubTeacher::decode(const BasicTensor<double>&,
                                                 const TokenBatch&) const;

}  // namespace duovoce
