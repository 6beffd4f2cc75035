// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "duovoce/audio_io.hpp"
#include "duovoce/dataset.hpp"
#include "duovoce/ddccrn.hpp"
#include "duovoce/teacher.hpp"

namespace duovoce {

// ------------------------------------------------------------------- STOI

inline constexpr int kStoiRate = 10000;
inline constexpr std::size_t kStoiFrame = 256;
inline constexpr std::size_t kStoiFft = 512;
inline constexpr std::size_t kStoiBands = 15;
inline constexpr double kStoiMinFreq = 150.0;
inline constexpr std::size_t kStoiSegment = 30;
inline constexpr double kStoiBeta = -15.0;
inline constexpr double kStoiDynRange = 40.0;

// Polyphase resampling by up/down with the Kaiser-windowed sinc that Octave's
// resample() designs; output length ceil(n * up / down).
std::vector<double> resample_poly(const std::vector<double>& x, int up,
                                  int down);

// Classic (non-extended) STOI. Throws std::invalid_argument on a length or
// rate mismatch, or when fewer than 30 analysis frames survive silent-frame
// removal.
double stoi(const Waveform& clean, const Waveform& processed);

// --------------------------------------------------------------- WER / CER

std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b);
// edit_distance / |ref|. Throws std::invalid_argument for an empty ref.
double wer(const std::vector<int>& ref, const std::vector<int>& hyp);
double cer(const std::string& ref, const std::string& hyp);
// Token sequences are spelled into symbols first.
double token_cer(const std::vector<int>& ref, const std::vector<int>& hyp);

// ----------------------------------------------------------------- reports

enum class Channel { kClean, kMic, kVib, kEnhanced };

std::string channel_name(Channel c);
Channel parse_channel(const std::string& name);

struct MetricsRecord {
  std::string id;
  Channel channel = Channel::kMic;
  SpeechMode mode = SpeechMode::kNormal;
  double level_db = 0.0;
  double si_sdr_db = 0.0;
  double stoi = 0.0;
  double wer = 0.0;
  double cer = 0.0;
};

struct MetricsCell {
  std::size_t count = 0;
  double si_sdr_db = 0.0;
  double stoi = 0.0;
  double wer = 0.0;
  double cer = 0.0;
};

using CellKey = std::tuple<Channel, SpeechMode, double>;

struct MetricsReport {
  std::vector<MetricsRecord> records;
  std::map<CellKey, MetricsCell> aggregates;
  // Externally computed PESQ per utterance id, merged verbatim.
  std::optional<std::map<std::string, double>> pesq;
};

// Means over records in each (channel, mode, level) cell.
std::map<CellKey, MetricsCell> aggregate(const std::vector<MetricsRecord>& records);

struct EvalOptions {
  std::vector<double> levels{-20.0, -10.0, 0.0, 10.0};
  std::vector<SpeechMode> modes{SpeechMode::kNormal, SpeechMode::kWhisper};
  std::vector<Channel> channels{Channel::kMic, Channel::kVib,
                                Channel::kEnhanced};
  std::uint64_t seed = 0;
  // Restricts evaluation to these ids when non-empty.
  std::vector<std::string> ids;
  ForwardOptions forward;
  std::size_t jobs = 1;
};

// `model` may be null when kEnhanced is not requested. Reference tokens are
// the manifest transcripts; hypotheses are the teacher's greedy decode of
// each channel.
MetricsReport evaluate(const CorpusManifest& manifest, const DdccrnModel* model,
                       const StubTeacher& teacher, const EvalOptions& opts);

std::string report_json(const MetricsReport& report);
// Rows are levels, columns {wer, cer, stoi} x mode for one channel.
std::string report_csv(const MetricsReport& report, Channel channel);
// Writes <base>.json, <base>.csv (enhanced, or mic when absent) and
// <base>.<channel>.csv for each evaluated channel.
void write_report(const MetricsReport& report, const std::filesystem::path& base);

}  // namespace duovoce
