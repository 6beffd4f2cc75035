// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "duovoce/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>

#include "fft.hpp"

namespace duovoce {

std::string window_name(WindowType w) {
  switch (w) {
    case WindowType::kHann:
      return "hann";
    case WindowType::kHamming:
      return "hamming";
    case WindowType::kRectangular:
      return "rect";
  }
  return "unknown";
}

WindowType parse_window(const std::string& name) {
  if (name == "hann") return WindowType::kHann;
  if (name == "hamming") return WindowType::kHamming;
  if (name == "rect" || name == "rectangular") return WindowType::kRectangular;
  throw std::invalid_argument("unknown window '" + name + "'");
}

std::vector<double> make_window(WindowType type, std::size_t n) {
  std::vector<double> w(n, 1.0);
  const double step = 2.0 * std::numbers::pi / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = std::cos(step * static_cast<double>(i));
    switch (type) {
      case WindowType::kHann:
        w[i] = 0.5 - 0.5 * c;
        break;
      case WindowType::kHamming:
        w[i] = 0.54 - 0.46 * c;
        break;
      case WindowType::kRectangular:
        break;
    }
  }
  return w;
}

void validate(const StftConfig& cfg) {
  const std::size_t n = cfg.fft_size;
  if (n < 2 || (n & (n - 1)) != 0) {
    throw std::invalid_argument("fft_size must be a power of two, got " +
                                std::to_string(n));
  }
  if (cfg.win_length == 0 || cfg.win_length > n) {
    throw std::invalid_argument("win_length must be in [1, fft_size]");
  }
  if (cfg.hop_length == 0 || cfg.hop_length > cfg.win_length / 2 + 1) {
    throw std::invalid_argument(
        "hop_length " + std::to_string(cfg.hop_length) +
        " breaks overlap-add coverage for win_length " +
        std::to_string(cfg.win_length));
  }
  const auto w = make_window(cfg.window, cfg.win_length);
  double peak = 0.0;
  std::vector<double> ola(cfg.hop_length, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    ola[i % cfg.hop_length] += w[i] * w[i];
    peak = std::max(peak, w[i] * w[i]);
  }
  for (double v : ola) {
    if (v <= 1e-8 * peak) {
      throw std::invalid_argument(
          "window/hop combination is not overlap-add invertible (" +
          window_name(cfg.window) + ", win " + std::to_string(cfg.win_length) +
          ", hop " + std::to_string(cfg.hop_length) + ")");
    }
  }
}

std::size_t stft_frame_count(std::size_t signal_length,
                             const StftConfig& cfg) {
  const std::size_t padded = signal_length + 2 * cfg.pad();
  if (padded < cfg.win_length) return 0;
  return 1 + (padded - cfg.win_length) / cfg.hop_length;
}

namespace {

void check_signal_length(std::size_t length, const StftConfig& cfg) {
  if (length == 0) throw std::invalid_argument("stft: empty waveform");
  if (length < cfg.win_length) {
    throw std::invalid_argument(
        "stft: signal of " + std::to_string(length) +
        " samples is shorter than one frame (" +
        std::to_string(cfg.win_length) + ")");
  }
}

std::size_t reflect(long j, std::size_t length) {
  const long n = static_cast<long>(length);
  if (j < 0) j = -j;
  if (j >= n) j = 2 * (n - 1) - j;
  return static_cast<std::size_t>(j);
}

// Shared analysis/synthesis machinery for one signal.
class Framer {
 public:
  Framer(const StftConfig& cfg, std::size_t length)
      : cfg_(cfg),
        length_(length),
        padded_(length + 2 * cfg.pad()),
        frames_(stft_frame_count(length, cfg)),
        window_(make_window(cfg.window, cfg.win_length)),
        fft_(cfg.fft_size),
        frame_(cfg.fft_size, 0.0),
        spec_(cfg.bins()) {}

  std::size_t frames() const { return frames_; }

  // x: unpadded signal. emit(t, k, X_k).
  template <typename T, typename Emit>
  void analyze(const T* x, Emit&& emit) {
    const long pad = static_cast<long>(cfg_.pad());
    for (std::size_t t = 0; t < frames_; ++t) {
      const long start = static_cast<long>(t * cfg_.hop_length) - pad;
      for (std::size_t j = 0; j < cfg_.win_length; ++j) {
        frame_[j] = window_[j] *
                    static_cast<double>(x[reflect(start + static_cast<long>(j),
                                                  length_)]);
      }
      std::fill(frame_.begin() + static_cast<long>(cfg_.win_length),
                frame_.end(), 0.0);
      fft_.forward(frame_.data(), spec_.data());
      for (std::size_t k = 0; k < spec_.size(); ++k) emit(t, k, spec_[k]);
    }
  }

  // Adjoint of analyze: grad(t, k) gives dL/dX_k as a complex number
  // (re part for dL/dRe, im part for dL/dIm). Accumulates into gx.
  template <typename T, typename Grad>
  void analyze_adjoint(Grad&& grad, T* gx) {
    const long pad = static_cast<long>(cfg_.pad());
    const std::size_t half = cfg_.fft_size / 2;
    for (std::size_t t = 0; t < frames_; ++t) {
      for (std::size_t k = 0; k < spec_.size(); ++k) {
        const std::complex<double> g = grad(t, k);
        spec_[k] = (k == 0 || k == half) ? std::complex<double>(g.real(), 0.0)
                                         : 0.5 * g;
      }
      fft_.inverse(spec_.data(), frame_.data());
      const long start = static_cast<long>(t * cfg_.hop_length) - pad;
      for (std::size_t j = 0; j < cfg_.win_length; ++j) {
        gx[reflect(start + static_cast<long>(j), length_)] +=
            static_cast<T>(frame_[j] * window_[j]);
      }
    }
  }

  // spec(t, k) -> X_k. Writes length_ samples to out.
  template <typename T, typename Spec>
  void synthesize(Spec&& spec, T* out) {
    std::vector<double> acc(padded_, 0.0);
    const auto& den = denominators();
    const double inv_n = 1.0 / static_cast<double>(cfg_.fft_size);
    for (std::size_t t = 0; t < frames_; ++t) {
      for (std::size_t k = 0; k < spec_.size(); ++k) spec_[k] = spec(t, k);
      fft_.inverse(spec_.data(), frame_.data());
      const std::size_t start = t * cfg_.hop_length;
      for (std::size_t j = 0; j < cfg_.win_length; ++j) {
        acc[start + j] += window_[j] * frame_[j] * inv_n;
      }
    }
    const std::size_t pad = cfg_.pad();
    for (std::size_t i = 0; i < length_; ++i) {
      out[i] = static_cast<T>(acc[pad + i] / den[pad + i]);
    }
  }

  // Adjoint of synthesize: g is dL/d(out); emit(t, k, dL/dX_k).
  template <typename T, typename Emit>
  void synthesize_adjoint(const T* g, Emit&& emit) {
    const auto& den = denominators();
    const std::size_t pad = cfg_.pad();
    const std::size_t half = cfg_.fft_size / 2;
    const double inv_n = 1.0 / static_cast<double>(cfg_.fft_size);
    std::vector<double> gfull(padded_, 0.0);
    for (std::size_t i = 0; i < length_; ++i) {
      gfull[pad + i] = static_cast<double>(g[i]) / den[pad + i];
    }
    for (std::size_t t = 0; t < frames_; ++t) {
      const std::size_t start = t * cfg_.hop_length;
      for (std::size_t j = 0; j < cfg_.win_length; ++j) {
        frame_[j] = window_[j] * gfull[start + j];
      }
      std::fill(frame_.begin() + static_cast<long>(cfg_.win_length),
                frame_.end(), 0.0);
      fft_.forward(frame_.data(), spec_.data());
      for (std::size_t k = 0; k < spec_.size(); ++k) {
        if (k == 0 || k == half) {
          emit(t, k, std::complex<double>(spec_[k].real() * inv_n, 0.0));
        } else {
          emit(t, k, spec_[k] * (2.0 * inv_n));
        }
      }
    }
  }

 private:
  const std::vector<double>& denominators() {
    if (!den_.empty()) return den_;
    den_.assign(padded_, 0.0);
    for (std::size_t t = 0; t < frames_; ++t) {
      const std::size_t start = t * cfg_.hop_length;
      for (std::size_t j = 0; j < cfg_.win_length; ++j) {
        den_[start + j] += window_[j] * window_[j];
      }
    }
    const std::size_t pad = cfg_.pad();
    for (std::size_t i = 0; i < length_; ++i) {
      if (den_[pad + i] <= 1e-12) {
        throw std::invalid_argument(
            "istft: zero window normalization at sample " +
            std::to_string(i) + " (configuration is not overlap-add "
            "invertible)");
      }
    }
    return den_;
  }

  StftConfig cfg_;
  std::size_t length_;
  std::size_t padded_;
  std::size_t frames_;
  std::vector<double> window_;
  fft::RealFft fft_;
  std::vector<double> frame_;
  std::vector<std::complex<double>> spec_;
  std::vector<double> den_;
};

}  // namespace

ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg) {
  validate(cfg);
  require_canonical_rate(w);
  check_signal_length(w.size(), cfg);
  Framer framer(cfg, w.size());
  ComplexSpectrogram out;
  out.config = cfg;
  out.signal_length = w.size();
  out.real = Matrix(framer.frames(), cfg.bins());
  out.imag = Matrix(framer.frames(), cfg.bins());
  framer.analyze(w.samples.data(),
                 [&](std::size_t t, std::size_t k, std::complex<double> x) {
                   out.real(t, k) = static_cast<float>(x.real());
                   out.imag(t, k) = static_cast<float>(x.imag());
                 });
  return out;
}

Waveform istft(const ComplexSpectrogram& s, int sample_rate_hz) {
  validate(s.config);
  if (s.real.rows != s.imag.rows || s.real.cols != s.imag.cols ||
      s.bins() != s.config.bins() ||
      s.frames() != stft_frame_count(s.signal_length, s.config) ||
      s.signal_length == 0) {
    throw std::invalid_argument(
        "istft: spectrogram shape inconsistent with its configuration");
  }
  Framer framer(s.config, s.signal_length);
  Waveform out;
  out.sample_rate_hz = sample_rate_hz;
  out.samples.resize(s.signal_length);
  framer.synthesize(
      [&](std::size_t t, std::size_t k) {
        return std::complex<double>(s.real(t, k), s.imag(t, k));
      },
      out.samples.data());
  return out;
}

// ------------------------------------------------------------------ mel

void validate(const MelConfig& cfg) {
  if (cfg.n_mels == 0) throw std::invalid_argument("n_mels must be positive");
  if (cfg.sample_rate_hz <= 0) {
    throw std::invalid_argument("mel sample rate must be positive");
  }
  if (!(cfg.f_min_hz >= 0.0 && cfg.f_min_hz < cfg.f_max_hz &&
        cfg.f_max_hz <= cfg.sample_rate_hz / 2.0)) {
    throw std::invalid_argument(
        "mel bounds must satisfy 0 <= f_min < f_max <= sample_rate / 2");
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

std::vector<double> mel_center_frequencies(const MelConfig& cfg) {
  validate(cfg);
  const double lo = hz_to_mel(cfg.f_min_hz);
  const double hi = hz_to_mel(cfg.f_max_hz);
  std::vector<double> centers(cfg.n_mels);
  if (cfg.n_mels == 1) {
    centers[0] = mel_to_hz(0.5 * (lo + hi));
    return centers;
  }
  const double step = (hi - lo) / static_cast<double>(cfg.n_mels - 1);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    centers[m] = mel_to_hz(lo + step * static_cast<double>(m));
  }
  return centers;
}

Matrix mel_filterbank(const MelConfig& cfg, std::size_t fft_size) {
  const auto centers = mel_center_frequencies(cfg);
  const std::size_t bins = fft_size / 2 + 1;
  const double lo = hz_to_mel(cfg.f_min_hz);
  const double hi = hz_to_mel(cfg.f_max_hz);
  const double step = cfg.n_mels > 1
                          ? (hi - lo) / static_cast<double>(cfg.n_mels - 1)
                          : (hi - lo);
  Matrix fb(cfg.n_mels, bins);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double mc = hz_to_mel(centers[m]);
    const double left = mel_to_hz(mc - step);
    const double right = mel_to_hz(mc + step);
    double total = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate_hz /
                       static_cast<double>(fft_size);
      if (f < cfg.f_min_hz || f > cfg.f_max_hz) continue;
      double wgt = 0.0;
      if (f > left && f <= centers[m]) {
        wgt = (f - left) / (centers[m] - left);
      } else if (f > centers[m] && f < right) {
        wgt = (right - f) / (right - centers[m]);
      }
      fb(m, k) = static_cast<float>(wgt);
      total += wgt;
    }
    if (total <= 0.0) {
      throw std::invalid_argument(
          "mel filterbank: band " + std::to_string(m) + " (center " +
          std::to_string(centers[m]) + " Hz) covers no FFT bin; n_mels " +
          std::to_string(cfg.n_mels) + " is too large for fft_size " +
          std::to_string(fft_size));
    }
  }
  return fb;
}

Matrix mel_spectrogram(const Waveform& w, const StftConfig& cfg,
                       const MelConfig& mel_cfg) {
  if (mel_cfg.sample_rate_hz != w.sample_rate_hz) {
    throw std::invalid_argument("mel config rate differs from waveform rate");
  }
  const ComplexSpectrogram s = stft(w, cfg);
  const Matrix fb = mel_filterbank(mel_cfg, cfg.fft_size);
  Matrix out(s.frames(), mel_cfg.n_mels);
  std::vector<double> power(s.bins());
  for (std::size_t t = 0; t < s.frames(); ++t) {
    for (std::size_t k = 0; k < s.bins(); ++k) {
      const double re = s.real(t, k), im = s.imag(t, k);
      power[k] = re * re + im * im;
    }
    for (std::size_t m = 0; m < mel_cfg.n_mels; ++m) {
      double acc = 0.0;
      for (std::size_t k = 0; k < s.bins(); ++k) acc += fb(m, k) * power[k];
      out(t, m) = static_cast<float>(std::log(acc + kLogMelEps));
    }
  }
  return out;
}

// ------------------------------------------------------------ differentiable

template <typename T>
SpectrumTensor<T> stft(const BasicTensor<T>& waves, const StftConfig& cfg) {
  validate(cfg);
  if (waves.rank() != 2) {
    throw ShapeError("stft: expected (batch, length), got " +
                     shape_str(waves.shape()));
  }
  const std::size_t batch = waves.dim(0), length = waves.dim(1);
  check_signal_length(length, cfg);
  const std::size_t bins = cfg.bins();
  const std::size_t frames = stft_frame_count(length, cfg);
  const std::size_t plane = bins * frames;

  std::vector<T> out(batch * 2 * plane);
  {
    Framer framer(cfg, length);
    for (std::size_t b = 0; b < batch; ++b) {
      T* re = out.data() + b * 2 * plane;
      T* im = re + plane;
      framer.analyze(waves.data().data() + b * length,
                     [&](std::size_t t, std::size_t k,
                         std::complex<double> x) {
                       re[k * frames + t] = static_cast<T>(x.real());
                       im[k * frames + t] = static_cast<T>(x.imag());
                     });
    }
  }
  BasicTensor<T> stacked(Shape{batch, 2, bins, frames}, std::move(out));
  if (detail::recording<T>({&waves})) {
    auto iw = waves.impl();
    auto io = stacked.impl();
    detail::attach_backward(stacked, [iw, io, cfg, batch, length, frames,
                                      plane]() {
      Framer framer(cfg, length);
      auto& gx = iw->grad_buffer();
      for (std::size_t b = 0; b < batch; ++b) {
        const T* gre = io->grad.data() + b * 2 * plane;
        const T* gim = gre + plane;
        framer.analyze_adjoint(
            [&](std::size_t t, std::size_t k) {
              return std::complex<double>(gre[k * frames + t],
                                          gim[k * frames + t]);
            },
            gx.data() + b * length);
      }
    });
  }
  return {slice(stacked, 1, 0, 1), slice(stacked, 1, 1, 1)};
}

template <typename T>
BasicTensor<T> istft(const BasicTensor<T>& re, const BasicTensor<T>& im,
                     const StftConfig& cfg, std::size_t length) {
  validate(cfg);
  const std::size_t bins = cfg.bins();
  const std::size_t frames = stft_frame_count(length, cfg);
  if (re.shape() != im.shape() || re.rank() != 4 || re.dim(1) != 1 ||
      re.dim(2) != bins || re.dim(3) != frames || length == 0) {
    throw ShapeError("istft: spectrum " + shape_str(re.shape()) +
                     " inconsistent with " + std::to_string(length) +
                     " samples");
  }
  const std::size_t batch = re.dim(0);
  const std::size_t plane = bins * frames;
  std::vector<T> out(batch * length);
  {
    Framer framer(cfg, length);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* pr = re.data().data() + b * plane;
      const T* pi = im.data().data() + b * plane;
      framer.synthesize(
          [&](std::size_t t, std::size_t k) {
            return std::complex<double>(pr[k * frames + t],
                                        pi[k * frames + t]);
          },
          out.data() + b * length);
    }
  }
  BasicTensor<T> result(Shape{batch, length}, std::move(out));
  if (detail::recording<T>({&re, &im})) {
    auto ir = re.impl(), ii = im.impl(), io = result.impl();
    detail::attach_backward(result, [ir, ii, io, cfg, batch, length, frames,
                                     plane]() {
      Framer framer(cfg, length);
      T* gr = ir->requires_grad ? ir->grad_buffer().data() : nullptr;
      T* gi = ii->requires_grad ? ii->grad_buffer().data() : nullptr;
      for (std::size_t b = 0; b < batch; ++b) {
        framer.synthesize_adjoint(
            io->grad.data() + b * length,
            [&](std::size_t t, std::size_t k, std::complex<double> g) {
              const std::size_t idx = b * plane + k * frames + t;
              if (gr) gr[idx] += static_cast<T>(g.real());
              if (gi) gi[idx] += static_cast<T>(g.imag());
            });
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> filterbank_tensor(const MelConfig& cfg, std::size_t fft_size) {
  const Matrix fb = mel_filterbank(cfg, fft_size);
  std::vector<T> data(fb.cols * fb.rows);
  for (std::size_t m = 0; m < fb.rows; ++m) {
    for (std::size_t k = 0; k < fb.cols; ++k) {
      data[k * fb.rows + m] = static_cast<T>(fb(m, k));
    }
  }
  return BasicTensor<T>(Shape{fb.cols, fb.rows}, std::move(data));
}

template <typename T>
BasicTensor<T> log_mel(const SpectrumTensor<T>& spec,
                       const BasicTensor<T>& filterbank_t, double eps) {
  const std::size_t batch = spec.re.dim(0), bins = spec.re.dim(2),
                    frames = spec.re.dim(3);
  if (filterbank_t.rank() != 2 || filterbank_t.dim(0) != bins) {
    throw ShapeError("log_mel: filterbank " + shape_str(filterbank_t.shape()) +
                     " does not match " + std::to_string(bins) + " bins");
  }
  const std::size_t n_mels = filterbank_t.dim(1);
  auto power = add(square(spec.re), square(spec.im));
  auto rows = reshape(permute(reshape(power, {batch, bins, frames}), {0, 2, 1}),
                      {batch * frames, bins});
  auto mel = matmul(rows, filterbank_t);
  return log(add_scalar(reshape(mel, {batch, frames, n_mels}), eps));
}

#define DUOVOCE_INSTANTIATE(T)                                              \
  template SpectrumTensor<T> stft(const BasicTensor<T>&, const StftConfig&); \
  template BasicTensor<T> istft(const BasicTensor<T>&, const BasicTensor<T>&, \
                                const StftConfig&, std::size_t);           \
  template BasicTensor<T> filterbank_tensor<T>(const MelConfig&, std::size_t); \
  template BasicTensor<T> log_mel(const SpectrumTensor<T>&,                 \
                                  const BasicTensor<T>&, double);

DUOVOCE_INSTANTIATE(float)
DUOVOCE_INSTANTIATE(double)

#undef DUOVOCE_INSTANTIATE

}  // namespace duovoce
