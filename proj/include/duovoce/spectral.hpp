// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Short-time Fourier analysis/synthesis and mel features.
//
// Frames are centered: the signal is reflection-padded by win_length / 2 on
// both ends, so frame t is centered on sample t * hop_length. A signal of
// length L yields 1 + L / hop_length frames (integer division). The window
// occupies the first win_length samples of each fft_size-point frame and the
// remainder is zero. Synthesis is weighted overlap-add normalized by the
// summed squared window, which makes istft(stft(x)) == x for any window
// whose squared overlap-add never vanishes.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "duovoce/audio_io.hpp"
#include "duovoce/tensor.hpp"

namespace duovoce {

enum class WindowType { kHann, kHamming, kRectangular };

std::string window_name(WindowType w);
// Accepts "hann", "hamming", "rect"/"rectangular". Throws on anything else.
WindowType parse_window(const std::string& name);
// Periodic window of length n.
std::vector<double> make_window(WindowType type, std::size_t n);

struct StftConfig {
  std::size_t fft_size = 512;
  std::size_t win_length = 400;
  std::size_t hop_length = 100;
  WindowType window = WindowType::kHann;

  std::size_t bins() const { return fft_size / 2 + 1; }
  std::size_t pad() const { return win_length / 2; }
  bool operator==(const StftConfig&) const = default;
};

// Throws std::invalid_argument for a non power-of-two fft_size,
// win_length > fft_size, a zero hop, or a hop/window pair whose squared
// overlap-add has zeros (reconstruction impossible).
void validate(const StftConfig& cfg);
std::size_t stft_frame_count(std::size_t signal_length, const StftConfig& cfg);

// Row-major float matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0f)
      : rows(r), cols(c), data(r * c, fill) {}
  float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }
};

// frames x bins. `signal_length` records the unpadded input length so that
// synthesis restores it exactly.
struct ComplexSpectrogram {
  Matrix real;
  Matrix imag;
  StftConfig config;
  std::size_t signal_length = 0;

  std::size_t frames() const { return real.rows; }
  std::size_t bins() const { return real.cols; }
};

ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg);
Waveform istft(const ComplexSpectrogram& s,
               int sample_rate_hz = kCanonicalRate);

inline constexpr double kLogMelEps = 1e-10;

struct MelConfig {
  std::size_t n_mels = 80;
  double f_min_hz = 0.0;
  double f_max_hz = 8000.0;
  int sample_rate_hz = kCanonicalRate;
};

void validate(const MelConfig& cfg);
double hz_to_mel(double hz);
double mel_to_hz(double mel);
// Center frequency of each band in Hz (strictly increasing).
std::vector<double> mel_center_frequencies(const MelConfig& cfg);
// n_mels x bins triangular filters. Band centers are equally spaced on the
// mel scale from f_min to f_max inclusive, so adjacent triangles sum to one
// across [f_min, f_max]; weights outside that range are zero. Throws
// std::invalid_argument if a band covers no FFT bin.
Matrix mel_filterbank(const MelConfig& cfg, std::size_t fft_size);
// frames x n_mels of log(mel power + 1e-10).
Matrix mel_spectrogram(const Waveform& w, const StftConfig& cfg,
                       const MelConfig& mel_cfg);

// ------------------------------------------------------------ differentiable

template <typename T>
struct SpectrumTensor {
  BasicTensor<T> re;  // (batch, 1, bins, frames)
  BasicTensor<T> im;
};

// waves: (batch, length) -> spectra laid out for 2-D convolution.
template <typename T>
SpectrumTensor<T> stft(const BasicTensor<T>& waves, const StftConfig& cfg);
// Inverse of the above; returns (batch, length).
template <typename T>
BasicTensor<T> istft(const BasicTensor<T>& re, const BasicTensor<T>& im,
                     const StftConfig& cfg, std::size_t length);
// (batch, 1, bins, frames) spectrum -> (batch, frames, n_mels) of
// log(mel power + eps). `filterbank_t` is the transposed filterbank, shape
// (bins, n_mels).
template <typename T>
BasicTensor<T> log_mel(const SpectrumTensor<T>& spec,
                       const BasicTensor<T>& filterbank_t,
                       double eps = kLogMelEps);
template <typename T>
BasicTensor<T> filterbank_tensor(const MelConfig& cfg, std::size_t fft_size);

}  // namespace duovoce
