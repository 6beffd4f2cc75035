// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "duovoce/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "fft.hpp"
#include "json.hpp"

#include "duovoce/random.hpp"

namespace duovoce {

namespace {

using json = nlohmann::json;
constexpr double kPi = std::numbers::pi;
constexpr double kFs = kCanonicalRate;

double db_to_gain(double db) { return std::pow(10.0, db / 20.0); }

double rms_d(const std::vector<double>& x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return x.empty() ? 0.0 : std::sqrt(acc / x.size());
}

Waveform to_waveform(const std::vector<double>& x) {
  Waveform w;
  w.samples.assign(x.begin(), x.end());
  return w;
}

// Windowed-sinc lowpass with unit DC gain.
std::vector<double> lowpass(double cutoff_hz, std::size_t taps) {
  std::vector<double> h(taps);
  const double fc = cutoff_hz / kFs;
  const double mid = (taps - 1) / 2.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < taps; ++i) {
    const double t = i - mid;
    const double sinc = t == 0.0 ? 2.0 * fc
                                 : std::sin(2.0 * kPi * fc * t) / (kPi * t);
    const double a = 2.0 * kPi * i / (taps - 1);
    const double blackman = 0.42 - 0.5 * std::cos(a) + 0.08 * std::cos(2 * a);
    h[i] = sinc * blackman;
    sum += h[i];
  }
  for (auto& v : h) v /= sum;
  return h;
}

// Two-pole resonator with roughly unit gain at its center frequency.
struct Resonator {
  double y1 = 0.0, y2 = 0.0;

  double step(double x, double freq_hz, double bw_hz) {
    const double r = std::exp(-kPi * bw_hz / kFs);
    const double theta = 2.0 * kPi * freq_hz / kFs;
    const double gain = (1.0 - r) * std::sqrt(1.0 - 2.0 * r * std::cos(2 * theta) + r * r);
    const double y = gain * x + 2.0 * r * std::cos(theta) * y1 - r * r * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

struct Syllable {
  double start, end;  // seconds
  double formants[3];
};

}  // namespace

std::string mode_name(SpeechMode m) {
  return m == SpeechMode::kNormal ? "normal" : "whisper";
}

SpeechMode parse_mode(const std::string& name) {
  if (name == "normal") return SpeechMode::kNormal;
  if (name == "whisper") return SpeechMode::kWhisper;
  throw std::invalid_argument("unknown speech mode '" + name + "'");
}

MixResult mix_noise_components(const Waveform& clean, const Waveform& noise,
                               const MixSpec& spec) {
  if (!std::isfinite(spec.level_db)) {
    throw std::invalid_argument("mix_noise: level_db must be finite");
  }
  const double clean_rms = rms(clean);
  if (clean.empty() || clean_rms == 0.0) {
    throw std::invalid_argument("mix_noise: clean signal is silent");
  }
  if (noise.empty() || rms(noise) == 0.0) {
    throw std::invalid_argument("mix_noise: noise signal is silent");
  }
  Rng rng(derive_seed(spec.seed, "offset"));
  const std::size_t offset = rng.uniform_int(noise.size());
  std::vector<double> tiled(clean.size());
  for (std::size_t i = 0; i < tiled.size(); ++i) {
    tiled[i] = noise.samples[(offset + i) % noise.size()];
  }
  const double tiled_rms = rms_d(tiled);
  if (tiled_rms == 0.0) {
    throw std::invalid_argument("mix_noise: noise segment is silent");
  }
  const double g = clean_rms * db_to_gain(spec.level_db) / tiled_rms;
  MixResult out;
  out.mixed.sample_rate_hz = out.noise.sample_rate_hz = clean.sample_rate_hz;
  out.mixed.samples.resize(clean.size());
  out.noise.samples.resize(clean.size());
  for (std::size_t i = 0; i < tiled.size(); ++i) {
    const float n = static_cast<float>(g * tiled[i]);
    out.noise.samples[i] = n;
    out.mixed.samples[i] = clean.samples[i] + n;
  }
  return out;
}

const std::vector<double>& vib_filter_taps() {
  static const std::vector<double> taps = [] {
    auto hi = lowpass(kVibHighHz, kVibTaps);
    const auto lo = lowpass(kVibLowHz, kVibTaps);
    for (std::size_t i = 0; i < hi.size(); ++i) hi[i] -= lo[i];
    return hi;
  }();
  return taps;
}

Waveform vib_response(const Waveform& clean, SpeechMode mode) {
  require_canonical_rate(clean);
  if (clean.empty()) return clean;
  const auto& taps = vib_filter_taps();
  const std::vector<double> x(clean.samples.begin(), clean.samples.end());
  const auto full = fft::convolve(x, taps);
  double gain_db = kVibGainDb;
  if (mode == SpeechMode::kWhisper) gain_db += kWhisperVibGainDb;
  const double g = db_to_gain(gain_db);
  // Drop the filter's group delay so vib stays aligned with the mic.
  const std::size_t delay = (taps.size() - 1) / 2;
  Waveform out;
  out.samples.resize(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    out.samples[i] = static_cast<float>(g * full[i + delay]);
  }
  return out;
}

Waveform simulate_vib(const Waveform& clean, SpeechMode mode,
                      std::uint64_t seed) {
  Waveform out = vib_response(clean, mode);
  const double floor = rms(clean) * db_to_gain(kSensorFloorDb);
  Rng rng(derive_seed(seed, "sensor"));
  for (auto& s : out.samples) s += static_cast<float>(floor * rng.normal());
  return out;
}

Waveform make_noise(NoiseKind kind, std::size_t length, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kind == NoiseKind::kPink ? "pink" : "babble"));
  std::vector<double> x(length, 0.0);
  if (length == 0) return to_waveform(x);
  if (kind == NoiseKind::kPink) {
    // Shape white noise by 1/sqrt(f) in the frequency domain.
    for (auto& v : x) v = rng.normal();
    fft::RealFft plan(length);
    std::vector<std::complex<double>> spec(length / 2 + 1);
    plan.forward(x.data(), spec.data());
    spec[0] = 0.0;
    for (std::size_t k = 1; k < spec.size(); ++k) {
      spec[k] /= std::sqrt(static_cast<double>(k));
    }
    plan.inverse(spec.data(), x.data());
  } else {
    constexpr int kTalkers = 5;
    for (int t = 0; t < kTalkers; ++t) {
      const double f0 = rng.uniform(90.0, 220.0);
      const double vib_rate = rng.uniform(0.3, 1.0);
      const double vib_phase = rng.uniform(0.0, 2 * kPi);
      const double am_rate = rng.uniform(2.0, 6.0);
      const double am_phase = rng.uniform(0.0, 2 * kPi);
      const int harmonics = static_cast<int>(4000.0 / f0);
      std::vector<double> phase(harmonics);
      for (auto& p : phase) p = rng.uniform(0.0, 2 * kPi);
      for (std::size_t n = 0; n < length; ++n) {
        const double time = n / kFs;
        const double f = f0 * (1.0 + 0.05 * std::sin(2 * kPi * vib_rate * time + vib_phase));
        const double env = 0.5 + 0.5 * std::sin(2 * kPi * am_rate * time + am_phase);
        double acc = 0.0;
        for (int h = 0; h < harmonics; ++h) {
          phase[h] += 2 * kPi * (h + 1) * f / kFs;
          acc += std::sin(phase[h]) / (h + 1);
        }
        x[n] += env * acc;
      }
    }
  }
  const double r = rms_d(x);
  if (r > 0.0) {
    for (auto& v : x) v *= 0.1 / r;
  }
  return to_waveform(x);
}

Waveform synth_utterance(SpeechMode mode, double seconds, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "utterance"));
  const std::size_t length = static_cast<std::size_t>(std::lround(seconds * kFs));
  const bool whisper = mode == SpeechMode::kWhisper;

  // Syllable layout with short pauses and a little leading silence.
  std::vector<Syllable> syl;
  double t = rng.uniform(0.05, 0.15);
  while (true) {
    const double dur = rng.uniform(0.15, 0.30);
    if (t + dur > seconds - 0.05) break;
    syl.push_back({t, t + dur,
                   {rng.uniform(300, 900), rng.uniform(900, 2500),
                    rng.uniform(2300, 3200)}});
    t += dur + rng.uniform(0.02, 0.08);
  }
  if (syl.empty()) {
    syl.push_back({0.0, seconds, {500, 1500, 2500}});
  }

  const double f0_base = rng.uniform(100.0, 200.0);
  const double contour_rate = rng.uniform(0.3, 1.0);
  const double contour_phase = rng.uniform(0.0, 2 * kPi);
  const double bw_scale = whisper ? 4.0 : 1.0;
  const double bw[3] = {rng.uniform(60, 90) * bw_scale,
                        rng.uniform(80, 110) * bw_scale,
                        rng.uniform(100, 130) * bw_scale};

  std::vector<double> x(length, 0.0);
  Resonator res[3];
  double pitch_phase = 0.0;
  double prev_pulse = 0.0;
  std::size_t cur = 0;
  for (std::size_t n = 0; n < length; ++n) {
    const double time = n / kFs;
    while (cur + 1 < syl.size() && time > syl[cur].end) ++cur;

    // Formants glide linearly between neighbouring syllable centers.
    double formants[3];
    const Syllable& a = syl[cur];
    const double mid_a = 0.5 * (a.start + a.end);
    const Syllable* b = nullptr;
    if (time > mid_a && cur + 1 < syl.size()) b = &syl[cur + 1];
    if (time < mid_a && cur > 0) b = &syl[cur - 1];
    for (int k = 0; k < 3; ++k) {
      formants[k] = a.formants[k];
      if (b != nullptr) {
        const double mid_b = 0.5 * (b->start + b->end);
        const double w = std::clamp((time - mid_a) / (mid_b - mid_a), 0.0, 1.0);
        formants[k] = (1 - w) * a.formants[k] + w * b->formants[k];
      }
    }

    double env = 0.0;
    if (time >= a.start && time <= a.end) {
      const double attack = std::min(0.03, 0.5 * (a.end - a.start));
      const double rise = std::min(1.0, (time - a.start) / attack);
      const double fall = std::min(1.0, (a.end - time) / attack);
      env = std::sin(0.5 * kPi * std::min(rise, fall));
      env *= env;
    }

    double excitation;
    if (whisper) {
      excitation = 0.3 * rng.normal();
    } else {
      const double f0 = std::clamp(
          f0_base * (1.0 + 0.15 * std::sin(2 * kPi * contour_rate * time +
                                           contour_phase) -
                     0.1 * time / seconds),
          85.0, 240.0);
      pitch_phase += f0 / kFs;
      double pulse = 0.0;
      if (pitch_phase >= 1.0) {
        pitch_phase -= 1.0;
        pulse = 1.0;
      }
      // Differentiated pulse train: no DC, flat-ish harmonic spectrum.
      excitation = pulse - prev_pulse;
      prev_pulse = pulse;
    }
    double y = excitation * env;
    for (int k = 0; k < 3; ++k) y = res[k].step(y, formants[k], bw[k]);
    x[n] = y;
  }

  const double r = rms_d(x);
  if (r > 0.0) {
    double peak_abs = 0.0;
    for (double v : x) peak_abs = std::max(peak_abs, std::abs(v));
    const double g = std::min(0.05 / r, 0.5 / peak_abs);
    for (auto& v : x) v *= g;
  }
  return to_waveform(x);
}

const ManifestEntry& CorpusManifest::find(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.id == id) return e;
  }
  throw std::out_of_range("manifest has no utterance '" + id + "'");
}

void write_manifest(const CorpusManifest& m) {
  const auto path = m.root / kManifestName;
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw WavError(WavErrorKind::kIo, "cannot write " + path.string());
  }
  for (const auto& e : m.entries) {
    const json j = {{"id", e.id},
                    {"clean_path", e.clean_path},
                    {"vib_path", e.vib_path},
                    {"noisy_path", e.noisy_path},
                    {"mode", mode_name(e.mode)},
                    {"level_db", e.level_db},
                    {"transcript_tokens", e.transcript_tokens}};
    os << j.dump() << '\n';
  }
  if (!os) throw WavError(WavErrorKind::kIo, "write failed: " + path.string());
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
  std::filesystem::path file = path;
  if (std::filesystem::is_directory(path)) file = path / kManifestName;
  std::ifstream is(file, std::ios::binary);
  if (!is) throw WavError(WavErrorKind::kIo, "cannot open " + file.string());
  CorpusManifest m;
  m.root = file.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.clean_path = j.at("clean_path").get<std::string>();
      e.vib_path = j.at("vib_path").get<std::string>();
      e.noisy_path = j.at("noisy_path").get<std::string>();
      e.mode = parse_mode(j.at("mode").get<std::string>());
      e.level_db = j.at("level_db").get<double>();
      e.transcript_tokens = j.at("transcript_tokens").get<std::vector<int>>();
      m.entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw std::invalid_argument(file.string() + ":" + std::to_string(lineno) +
                                  ": " + ex.what());
    }
  }
  return m;
}

Waveform noise_for(std::uint64_t seed, std::size_t index, std::size_t length) {
  const auto kind = (derive_seed(seed, "noise_kind", index) & 1) != 0
                        ? NoiseKind::kBabble
                        : NoiseKind::kPink;
  return make_noise(kind, length, derive_seed(seed, "noise", index));
}

CorpusManifest gen_toy_corpus(std::size_t n_utterances, std::uint64_t seed,
                              const std::filesystem::path& out_dir,
                              const StubTeacher& teacher) {
  if (n_utterances == 0) {
    throw std::invalid_argument("gen_toy_corpus: need at least one utterance");
  }
  for (const char* sub : {"clean", "vib", "noisy"}) {
    std::filesystem::create_directories(out_dir / sub);
  }
  CorpusManifest m;
  m.root = out_dir;
  for (std::size_t i = 0; i < n_utterances; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "utt%04zu", i);
    ManifestEntry e;
    e.id = id;
    e.mode = i % 2 == 0 ? SpeechMode::kNormal : SpeechMode::kWhisper;
    Rng rng(derive_seed(seed, "utt", i));
    const double seconds = rng.uniform(1.0, 3.0);
    e.level_db = rng.uniform(-10.0, 10.0);

    const Waveform clean =
        synth_utterance(e.mode, seconds, derive_seed(seed, "speech", i));
    const Waveform vib = simulate_vib(clean, e.mode, derive_seed(seed, "vib", i));
    const Waveform noise = noise_for(seed, i, clean.size());
    const Waveform mic =
        mix_noise(clean, noise, {e.level_db, derive_seed(seed, "mix", i)});
    e.transcript_tokens = teacher.transcribe(clean).tokens;

    e.clean_path = "clean/" + e.id + ".wav";
    e.vib_path = "vib/" + e.id + ".wav";
    e.noisy_path = "noisy/" + e.id + ".wav";
    write_wav(m.resolve(e.clean_path), clean, SampleFormat::kFloat32);
    write_wav(m.resolve(e.vib_path), vib, SampleFormat::kFloat32);
    write_wav(m.resolve(e.noisy_path), DualCapture{vib, mic},
              SampleFormat::kFloat32);
    m.entries.push_back(std::move(e));
  }
  write_manifest(m);
  return m;
}

TrainingBatch build_training_batch(const CorpusManifest& manifest,
                                   const std::vector<std::string>& ids,
                                   const MixSpec& spec) {
  TrainingBatch batch;
  for (const auto& id : ids) {
    const auto& e = manifest.find(id);
    const std::size_t index = static_cast<std::size_t>(&e - manifest.entries.data());
    Waveform clean = read_waveform(manifest.resolve(e.clean_path));
    Waveform vib = read_waveform(manifest.resolve(e.vib_path));
    const Waveform noise = noise_for(spec.seed, index, clean.size());
    Waveform mic =
        mix_noise(clean, noise, {spec.level_db, derive_seed(spec.seed, "mix", index)});
    batch.noisy.push_back({std::move(vib), std::move(mic)});
    batch.clean.push_back(std::move(clean));
    batch.labels.push_back({e.transcript_tokens});
  }
  return batch;
}

}  // namespace duovoce
