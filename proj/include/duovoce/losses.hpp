// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Training objectives: enhancement loss (log-mel MSE minus weighted SI-SDR)
// and distillation losses against the stub teacher.

#pragma once

#include <span>
#include <vector>

#include "duovoce/audio_io.hpp"
#include "duovoce/spectral.hpp"
#include "duovoce/teacher.hpp"
#include "duovoce/tensor.hpp"

namespace duovoce {

struct LossWeights {
  double lambda_si = 0.1;
  double lambda_soft = 1.0;
  double lambda_hard = 1.0;
  double lambda_kd = 0.5;
};

// Throws std::invalid_argument unless every weight is finite and >= 0.
void validate(const LossWeights& w);

inline constexpr double kSiSdrCapDb = 100.0;
inline constexpr double kSiSdrMinError = 1e-20;
inline constexpr double kProbFloor = 1e-12;

// 10 log10(|a ref|^2 / |a ref - est|^2) with a = <est, ref> / <ref, ref>,
// clamped to at most kSiSdrCapDb. Throws std::invalid_argument on a length
// mismatch or an all-zero reference.
double si_sdr(std::span<const float> ref, std::span<const float> est);
inline double si_sdr(const Waveform& ref, const Waveform& est) {
  return si_sdr(ref.samples, est.samples);
}
// Row-wise over (B, L); returns (B). Gradient flows through `est`; capped
// rows contribute none.
template <typename T>
BasicTensor<T> si_sdr(const BasicTensor<T>& ref, const BasicTensor<T>& est);

struct AeLossConfig {
  StftConfig stft;
  MelConfig mel;
  double lambda_si = 0.1;
};

// mean((logmel(enh) - logmel(clean))^2) - lambda_si * mean_b si_sdr_b.
// `filterbank_t` comes from filterbank_tensor(cfg.mel, cfg.stft.fft_size).
template <typename T>
BasicTensor<T> l_ae(const BasicTensor<T>& clean, const BasicTensor<T>& enhanced,
                    const AeLossConfig& cfg, const BasicTensor<T>& filterbank_t);
double l_ae(const Waveform& clean, const Waveform& enhanced,
            const AeLossConfig& cfg);

// Mean over positions of -log(p[label] + 1e-12). probs: (B, N, V).
template <typename T>
BasicTensor<T> l_hard(const BasicTensor<T>& probs, const TokenBatch& labels);
// Mean over positions of KL(teacher || student), student floored at 1e-12.
// The teacher is treated as a constant.
template <typename T>
BasicTensor<T> l_soft(const BasicTensor<T>& teacher,
                      const BasicTensor<T>& student);

double l_hard(const TokenDistribution& dist, const PseudoLabels& labels);
double l_soft(const TokenDistribution& teacher,
              const TokenDistribution& student);

template <typename T>
BasicTensor<T> l_kd(const BasicTensor<T>& soft, const BasicTensor<T>& hard,
                    const LossWeights& w) {
  return add(scale(soft, w.lambda_soft), scale(hard, w.lambda_hard));
}
inline double l_kd(double soft, double hard, const LossWeights& w) {
  return w.lambda_soft * soft + w.lambda_hard * hard;
}

template <typename T>
BasicTensor<T> l_total(const BasicTensor<T>& ae, const BasicTensor<T>& kd,
                       const LossWeights& w) {
  return add(ae, scale(kd, w.lambda_kd));
}
inline double l_total(double ae, double kd, const LossWeights& w) {
  return ae + w.lambda_kd * kd;
}

}  // namespace duovoce
