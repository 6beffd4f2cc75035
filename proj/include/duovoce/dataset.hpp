// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Synthetic data pipeline: noise mixing at an RMS level relative to the
// clean signal, a simulated vibration sensor, and a toy corpus of harmonic
// ("normal") and noise-excited ("whisper") speech-like utterances.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "duovoce/audio_io.hpp"
#include "duovoce/teacher.hpp"

namespace duovoce {

enum class SpeechMode { kNormal, kWhisper };

std::string mode_name(SpeechMode m);
SpeechMode parse_mode(const std::string& name);

// level_db is noise RMS relative to clean RMS: positive means louder noise.
struct MixSpec {
  double level_db = 0.0;
  std::uint64_t seed = 0;
};

struct MixResult {
  Waveform mixed;
  Waveform noise;  // the scaled noise actually added
};

// Tiles `noise` from a seed-dependent offset to the clean length and scales
// it to rms(clean) * 10^(level_db / 20). No clipping. Throws
// std::invalid_argument if either input is silent.
MixResult mix_noise_components(const Waveform& clean, const Waveform& noise,
                               const MixSpec& spec);
inline Waveform mix_noise(const Waveform& clean, const Waveform& noise,
                          const MixSpec& spec) {
  return mix_noise_components(clean, noise, spec).mixed;
}

inline constexpr double kVibLowHz = 10.0;
inline constexpr double kVibHighHz = 2000.0;
inline constexpr std::size_t kVibTaps = 1601;
inline constexpr double kVibGainDb = -6.0;
inline constexpr double kWhisperVibGainDb = -12.0;
inline constexpr double kSensorFloorDb = -50.0;

// Linear-phase band-pass taps (Blackman-windowed sinc difference).
const std::vector<double>& vib_filter_taps();
// Band-passed, attenuated copy of `clean` without the sensor floor.
Waveform vib_response(const Waveform& clean, SpeechMode mode);
// vib_response plus white sensor noise at kSensorFloorDb re rms(clean).
Waveform simulate_vib(const Waveform& clean, SpeechMode mode,
                      std::uint64_t seed);

enum class NoiseKind { kPink, kBabble };

Waveform make_noise(NoiseKind kind, std::size_t length, std::uint64_t seed);
Waveform synth_utterance(SpeechMode mode, double seconds, std::uint64_t seed);

struct ManifestEntry {
  std::string id;
  std::string clean_path;  // relative to the manifest directory
  std::string vib_path;
  std::string noisy_path;
  SpeechMode mode = SpeechMode::kNormal;
  double level_db = 0.0;
  std::vector<int> transcript_tokens;
};

struct CorpusManifest {
  std::filesystem::path root;  // directory holding manifest.jsonl
  std::vector<ManifestEntry> entries;

  // Throws std::out_of_range for an unknown id.
  const ManifestEntry& find(const std::string& id) const;
  std::filesystem::path resolve(const std::string& rel) const {
    return root / rel;
  }
};

inline constexpr const char* kManifestName = "manifest.jsonl";

void write_manifest(const CorpusManifest& m);
// `path` is the manifest file or its directory.
CorpusManifest read_manifest(const std::filesystem::path& path);

// Writes clean/, vib/, noisy/ float WAVs and manifest.jsonl under out_dir.
// Modes alternate starting with normal; level_db ~ U[-10, 10].
CorpusManifest gen_toy_corpus(std::size_t n_utterances, std::uint64_t seed,
                              const std::filesystem::path& out_dir,
                              const StubTeacher& teacher);

// Noise for utterance `index` of a mix seeded by `seed`.
Waveform noise_for(std::uint64_t seed, std::size_t index, std::size_t length);

struct TrainingBatch {
  std::vector<DualCapture> noisy;
  std::vector<Waveform> clean;
  std::vector<PseudoLabels> labels;
};

// Re-mixes each listed utterance at spec.level_db with noise drawn from
// spec.seed. Throws std::out_of_range for a missing id.
TrainingBatch build_training_batch(const CorpusManifest& manifest,
                                   const std::vector<std::string>& ids,
                                   const MixSpec& spec);

}  // namespace duovoce
