// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Frozen stand-in recognizer used as the distillation teacher and as the
// scorer for WER/CER. Its weights are drawn once from a fixed seed and never
// trained.
//
// Encoder: log-mel -> conv(1x3, stride 2) -> tanh -> conv(1x3, stride 2) ->
// tanh, giving one state per four STFT frames (rounded up).
// Decoder: token i mean-pools its span of `token_span` states, adds the
// embedding of token i-1 (a BOS row for i = 0), then tanh, a linear layer and
// softmax over the vocabulary.

#pragma once

#include <cstdint>
#include <vector>

#include "duovoce/audio_io.hpp"
#include "duovoce/spectral.hpp"
#include "duovoce/tensor.hpp"

namespace duovoce {

struct TeacherConfig {
  std::size_t vocab = 64;
  std::size_t dim = 64;
  std::size_t token_span = 4;
  std::uint64_t seed = 42;
  StftConfig stft;
  MelConfig mel;
};

struct TeacherStates {
  Matrix hidden;  // state frames x dim
};

struct TokenDistribution {
  std::size_t positions = 0;
  std::size_t vocab = 0;
  std::vector<float> probs;  // positions x vocab

  float at(std::size_t i, std::size_t v) const { return probs[i * vocab + v]; }
};

struct PseudoLabels {
  std::vector<int> tokens;
};

using TokenBatch = std::vector<std::vector<int>>;

class StubTeacher {
 public:
  explicit StubTeacher(const TeacherConfig& cfg = {});

  const TeacherConfig& config() const { return cfg_; }
  std::size_t state_frames(std::size_t signal_length) const;
  std::size_t token_count(std::size_t state_frames) const;

  // waves (B, L) -> states (B, S, dim).
  template <typename T>
  BasicTensor<T> encode(const BasicTensor<T>& waves) const;
  // Teacher-forced distributions (B, N, vocab). Row b of `prefix` holds the
  // tokens fed back; it needs at least N - 1 entries and at most N.
  template <typename T>
  BasicTensor<T> decode(const BasicTensor<T>& states,
                        const TokenBatch& prefix) const;
  TokenBatch greedy(const Tensor& states) const;

  TeacherStates encode(const Waveform& w) const;
  TokenDistribution decode(const TeacherStates& states,
                           const PseudoLabels& prefix) const;
  PseudoLabels transcribe(const Waveform& w) const;

 private:
  TeacherConfig cfg_;
  Tensor filterbank_t_;
  Tensor conv1_w_, conv1_b_;
  Tensor conv2_w_, conv2_b_;
  Tensor embed_;  // (vocab + 1) x dim, last row is BOS
  Tensor state_w_, state_b_;
  Tensor out_w_, out_b_;
};

// Writes each token as two base-8 symbols, giving the character stream that
// CER is computed on.
std::vector<int> spell(const std::vector<int>& tokens);

}  // namespace duovoce
