// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace duovoce {

inline constexpr int kCanonicalRate = 16000;

// Mono float waveform, nominally in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate_hz = kCanonicalRate;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
};

// Time-aligned vibration (left channel) and microphone (right channel) pair.
struct DualCapture {
  Waveform vib;
  Waveform mic;

  std::size_t size() const { return mic.size(); }
};

enum class WavErrorKind {
  kIo,
  kNotWav,
  kChannelCount,
  kUnsupportedEncoding,
};

class WavError : public std::runtime_error {
 public:
  WavError(WavErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  WavErrorKind kind() const { return kind_; }

 private:
  WavErrorKind kind_;
};

enum class SampleFormat { kPcm16, kFloat32 };

// Decoded RIFF/WAVE contents, channels de-interleaved.
struct WavData {
  int sample_rate_hz = 0;
  std::vector<std::vector<float>> channels;
};

WavData read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const WavData& data,
               SampleFormat format = SampleFormat::kPcm16);

// Reads a mono file, or the first channel of a multi-channel file when
// `allow_multichannel` is set.
Waveform read_waveform(const std::filesystem::path& path,
                       bool allow_multichannel = false);
// Left channel becomes vib, right channel becomes mic. Throws WavError with
// kChannelCount unless the file has exactly two channels.
DualCapture read_capture(const std::filesystem::path& path);

void write_wav(const std::filesystem::path& path, const Waveform& w,
               SampleFormat format = SampleFormat::kPcm16);
void write_wav(const std::filesystem::path& path, const DualCapture& c,
               SampleFormat format = SampleFormat::kPcm16);

// Checks sample_rate_hz > 0, all samples finite, and for captures that both
// channels agree in length and rate. Throws std::invalid_argument.
void validate(const Waveform& w);
void validate(const DualCapture& c);
// Throws std::invalid_argument unless the rate is 16 kHz.
void require_canonical_rate(const Waveform& w);

double rms(std::span<const float> samples);
inline double rms(const Waveform& w) { return rms(w.samples); }
double peak(std::span<const float> samples);
// Scales so the absolute peak equals `target`. Silent input is returned as is.
Waveform peak_normalize(const Waveform& w, double target = 0.99);

}  // namespace duovoce
