// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "duovoce/losses.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace duovoce {

namespace {

const double kDbPerNeper = 10.0 / std::numbers::ln10;

void check_dist(const TokenDistribution& d, const char* what) {
  if (d.probs.size() != d.positions * d.vocab) {
    throw std::invalid_argument(std::string(what) +
                                ": probs size disagrees with positions*vocab");
  }
}

template <typename T>
BasicTensor<T> dist_tensor(const TokenDistribution& d) {
  std::vector<T> data(d.probs.begin(), d.probs.end());
  return BasicTensor<T>(Shape{1, d.positions, d.vocab}, std::move(data));
}

}  // namespace

void validate(const LossWeights& w) {
  for (double v : {w.lambda_si, w.lambda_soft, w.lambda_hard, w.lambda_kd}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument("loss weights must be finite and >= 0");
    }
  }
}

double si_sdr(std::span<const float> ref, std::span<const float> est) {
  if (ref.size() != est.size()) {
    throw std::invalid_argument("si_sdr: length mismatch (" +
                                std::to_string(ref.size()) + " vs " +
                                std::to_string(est.size()) + ")");
  }
  if (ref.empty()) throw std::invalid_argument("si_sdr: empty signals");
  double dot = 0.0, rr = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    dot += double(est[i]) * ref[i];
    rr += double(ref[i]) * ref[i];
  }
  if (rr == 0.0) throw std::invalid_argument("si_sdr: zero reference");
  const double alpha = dot / rr;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double target = alpha * ref[i];
    const double err = target - est[i];
    num += target * target;
    den += err * err;
  }
  if (den < kSiSdrMinError) return kSiSdrCapDb;
  return std::min(kSiSdrCapDb, 10.0 * std::log10(num / den));
}

template <typename T>
BasicTensor<T> si_sdr(const BasicTensor<T>& ref, const BasicTensor<T>& est) {
  if (ref.rank() != 2 || ref.shape() != est.shape()) {
    throw ShapeError("si_sdr: ref " + shape_str(ref.shape()) + " and est " +
                     shape_str(est.shape()) + " must both be (batch, length)");
  }
  const std::size_t batch = ref.dim(0);
  const auto ref_c = ref.detach();
  const auto rr = sum(square(ref_c), 1);
  for (T v : rr.data()) {
    if (v == T(0)) throw std::invalid_argument("si_sdr: zero reference");
  }
  const auto alpha = div(sum(mul(est, ref_c), 1), rr);
  const auto target = mul(reshape(alpha, {batch, 1}), ref_c);
  const auto num = sum(square(target), 1);
  const auto den = sum(square(sub(target, est)), 1);

  // Rows at the cap get a constant value; the others keep their gradient.
  BasicTensor<T> keep(Shape{batch}), fill(Shape{batch}), guard(Shape{batch});
  for (std::size_t b = 0; b < batch; ++b) {
    const double n = num.data()[b], d = den.data()[b];
    const bool capped = d < kSiSdrMinError || n <= 0.0 ||
                        kDbPerNeper * std::log(n / d) >= kSiSdrCapDb;
    keep.data()[b] = capped ? T(0) : T(1);
    fill.data()[b] = capped ? static_cast<T>(kSiSdrCapDb) : T(0);
    guard.data()[b] = capped ? T(1) : T(0);
  }
  const auto ratio = div(add(num, guard), add(den, guard));
  return add(mul(scale(log(ratio), kDbPerNeper), keep), fill);
}

template <typename T>
BasicTensor<T> l_ae(const BasicTensor<T>& clean, const BasicTensor<T>& enhanced,
                    const AeLossConfig& cfg, const BasicTensor<T>& filterbank_t) {
  if (clean.shape() != enhanced.shape()) {
    throw ShapeError("l_ae: clean " + shape_str(clean.shape()) +
                     " vs enhanced " + shape_str(enhanced.shape()));
  }
  const auto clean_c = clean.detach();
  const auto target = log_mel(stft(clean_c, cfg.stft), filterbank_t);
  const auto est = log_mel(stft(enhanced, cfg.stft), filterbank_t);
  const auto mse = mean(square(sub(est, target)));
  if (cfg.lambda_si == 0.0) return mse;
  return sub(mse, scale(mean(si_sdr(clean_c, enhanced)), cfg.lambda_si));
}

double l_ae(const Waveform& clean, const Waveform& enhanced,
            const AeLossConfig& cfg) {
  if (clean.size() != enhanced.size()) {
    throw std::invalid_argument("l_ae: length mismatch");
  }
  NoGradScope no_grad;
  const auto to_tensor = [](const Waveform& w) {
    return TensorD(Shape{1, w.size()},
                   std::vector<double>(w.samples.begin(), w.samples.end()));
  };
  return l_ae(to_tensor(clean), to_tensor(enhanced), cfg,
              filterbank_tensor<double>(cfg.mel, cfg.stft.fft_size))
      .item();
}

template <typename T>
BasicTensor<T> l_hard(const BasicTensor<T>& probs, const TokenBatch& labels) {
  if (probs.rank() != 3 || labels.size() != probs.dim(0)) {
    throw ShapeError("l_hard: probs " + shape_str(probs.shape()) + " vs " +
                     std::to_string(labels.size()) + " label rows");
  }
  const std::size_t batch = probs.dim(0), n = probs.dim(1), v = probs.dim(2);
  BasicTensor<T> onehot(probs.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b].size() != n) {
      throw std::invalid_argument("l_hard: " + std::to_string(labels[b].size()) +
                                  " labels for " + std::to_string(n) +
                                  " positions");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const int y = labels[b][i];
      if (y < 0 || static_cast<std::size_t>(y) >= v) {
        throw std::invalid_argument("l_hard: label outside vocabulary");
      }
      onehot.data()[(b * n + i) * v + y] = T(1);
    }
  }
  const auto picked = sum(mul(probs, onehot), 2);
  return neg(mean(log(add_scalar(picked, kProbFloor))));
}

template <typename T>
BasicTensor<T> l_soft(const BasicTensor<T>& teacher,
                      const BasicTensor<T>& student) {
  if (teacher.shape() != student.shape() || teacher.rank() < 1) {
    throw ShapeError("l_soft: teacher " + shape_str(teacher.shape()) +
                     " vs student " + shape_str(student.shape()));
  }
  const std::size_t v = teacher.shape().back();
  const std::size_t positions = teacher.numel() / v;
  // Entropy part sum Q log Q is constant, with 0 log 0 = 0.
  double neg_entropy = 0.0;
  for (T q : teacher.data()) {
    if (q > T(0)) neg_entropy += double(q) * std::log(double(q));
  }
  const auto q = teacher.detach();
  const auto cross = sum(mul(q, log(clamp_min(student, kProbFloor))));
  return scale(add_scalar(neg(cross), neg_entropy), 1.0 / positions);
}

double l_hard(const TokenDistribution& dist, const PseudoLabels& labels) {
  check_dist(dist, "l_hard");
  NoGradScope no_grad;
  return l_hard(dist_tensor<double>(dist), TokenBatch{labels.tokens}).item();
}

double l_soft(const TokenDistribution& teacher,
              const TokenDistribution& student) {
  check_dist(teacher, "l_soft");
  check_dist(student, "l_soft");
  NoGradScope no_grad;
  return l_soft(dist_tensor<double>(teacher), dist_tensor<double>(student))
      .item();
}

#define DUOVOCE_INSTANTIATE(T)                                                \
  template BasicTensor<T> si_sdr(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> l_ae(const BasicTensor<T>&, const BasicTensor<T>&,  \
                               const AeLossConfig&, const BasicTensor<T>&);   \
  template BasicTensor<T> l_hard(const BasicTensor<T>&, const TokenBatch&);   \
  template BasicTensor<T> l_soft(const BasicTensor<T>&, const BasicTensor<T>&);

DUOVOCE_INSTANTIATE(float)
DUOVOCE_INSTANTIATE(double)

#undef DUOVOCE_INSTANTIATE

}  // namespace duovoce
