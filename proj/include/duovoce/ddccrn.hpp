// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Dual-input deep complex convolution recurrent network.
//
// Mic and vib spectra enter as two complex channels. Each encoder stage is a
// complex conv (stride 2 along frequency, causal along time) followed by
// complex normalization and leaky ReLU. A complex LSTM runs over frames at
// the bottleneck, a complex dense layer maps back to the bottleneck size, and
// the decoder mirrors the encoder with skip concatenation. The final decoder
// stage emits one complex mask which scales the mic spectrum.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "duovoce/audio_io.hpp"
#include "duovoce/checkpoint.hpp"
#include "duovoce/complex_nn.hpp"
#include "duovoce/spectral.hpp"

namespace duovoce {

inline constexpr double kLeakySlope = 0.1;

struct DdccrnConfig {
  std::vector<std::size_t> encoder_channels{16, 32, 64, 128};
  std::size_t kernel_h = 5;  // frequency
  std::size_t kernel_w = 2;  // time
  // One entry per encoder stage; empty means stride 2 everywhere.
  std::vector<std::size_t> stride_freq;
  std::size_t lstm_hidden = 128;
  std::size_t lstm_layers = 1;
  std::string mask_variant = "E";
  StftConfig stft;

  std::size_t stages() const { return encoder_channels.size(); }
  std::size_t stride(std::size_t stage) const {
    return stride_freq.empty() ? 2 : stride_freq.at(stage);
  }
  // Frequency extent after each encoder stage, entry 0 being the input.
  std::vector<std::size_t> freq_sizes() const;
  // Compares effective strides, so an empty stride_freq equals all-2s.
  bool operator==(const DdccrnConfig& other) const;
};

// Throws std::invalid_argument when a field is out of range or the decoder
// cannot restore the encoder's frequency sizes exactly.
void validate(const DdccrnConfig& cfg);

std::string config_to_json(const DdccrnConfig& cfg);
DdccrnConfig config_from_json(const std::string& text);

struct DdccrnModel {
  DdccrnConfig config;
  ParamMap<float> params;
};

// Deterministic: identical config and seed give bit-identical parameters.
DdccrnModel build(const DdccrnConfig& cfg, std::uint64_t seed);
std::size_t count_params(const DdccrnModel& model);

// Test hook replacing the learned mask.
enum class MaskOverride { kNone, kUnity, kZero };

struct ForwardOptions {
  MaskOverride mask = MaskOverride::kNone;
};

// Polar mask: |out| = |spec| * tanh(|mask|), phase(out) = phase(spec) +
// phase(mask).
template <typename T>
BasicComplexTensor<T> mask_apply(const BasicComplexTensor<T>& spec,
                                 const BasicComplexTensor<T>& mask);
ComplexSpectrogram mask_apply(const ComplexSpectrogram& spec,
                              const ComplexSpectrogram& mask);

// Network body: (B, 2, F, T) input spectra -> (B, 1, F, T) complex mask.
template <typename T>
BasicComplexTensor<T> estimate_mask(const DdccrnConfig& cfg,
                                    const ParamMap<T>& params,
                                    const BasicComplexTensor<T>& input);

// mic, vib: (B, L) -> enhanced (B, L).
template <typename T>
BasicTensor<T> forward_batch(const DdccrnConfig& cfg, const ParamMap<T>& params,
                             const BasicTensor<T>& mic,
                             const BasicTensor<T>& vib,
                             const ForwardOptions& opts = {});

Waveform forward(const DdccrnModel& model, const DualCapture& capture,
                 const ForwardOptions& opts = {});

// Writes `<path>` (parameters) and `<path>.json` (config).
void save_model(const DdccrnModel& model, const std::filesystem::path& path);
// Throws CheckpointError when either file is missing or inconsistent.
DdccrnModel load_model(const std::filesystem::path& path);

struct EnhanceResult {
  double seconds = 0.0;
  std::size_t samples = 0;
};

EnhanceResult enhance_file(const DdccrnModel& model,
                           const std::filesystem::path& in_path,
                           const std::filesystem::path& out_path);

}  // namespace duovoce
