// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "duovoce/dataset.hpp"
#include "duovoce/random.hpp"
#include "test_util.hpp"

using namespace duovoce;
using duovoce::testing::random_waveform;
using duovoce::testing::sine;
using duovoce::testing::TempDir;

namespace {

double level_of(const Waveform& noise, const Waveform& clean) {
  return 20.0 * std::log10(rms(noise) / rms(clean));
}

// Residual of an order-12 LPC inverse filter fitted to x[0, n). Removing the
// formant envelope leaves a pulse train for voiced input and white noise for
// whispered input.
std::vector<double> lpc_residual(const float* x, std::size_t n) {
  constexpr int kOrder = 12;
  std::vector<double> r(kOrder + 1, 0.0);
  for (int k = 0; k <= kOrder; ++k) {
    for (std::size_t i = k; i < n; ++i) r[k] += double(x[i]) * x[i - k];
  }
  // Levinson-Durbin.
  std::vector<double> a(kOrder + 1, 0.0);
  a[0] = 1.0;
  double err = r[0] * (1.0 + 1e-9);
  for (int i = 1; i <= kOrder; ++i) {
    double acc = r[i];
    for (int j = 1; j < i; ++j) acc += a[j] * r[i - j];
    const double k = -acc / err;
    const auto prev = a;
    for (int j = 1; j < i; ++j) a[j] = prev[j] + k * prev[i - j];
    a[i] = k;
    err *= 1.0 - k * k;
  }
  std::vector<double> e;
  for (std::size_t i = kOrder; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j <= kOrder; ++j) s += a[j] * x[i - j];
    e.push_back(s);
  }
  return e;
}

struct Periodicity {
  double peak = 0.0;  // median over frames of the best correlation
  std::size_t lag = 0;  // median over frames of the best lag
};

// Energetic 40 ms frames; per frame, the best normalized autocorrelation of
// the LPC residual at lags 64..200 samples (250..80 Hz at 16 kHz).
Periodicity periodicity(const Waveform& w) {
  const std::size_t frame = 640, lo = 64, hi = 200;
  std::vector<double> energy;
  for (std::size_t s = 0; s + frame + hi <= w.size(); s += frame) {
    energy.push_back(rms(std::span(w.samples).subspan(s, frame)));
  }
  const double top = *std::max_element(energy.begin(), energy.end());
  std::vector<double> peaks;
  std::vector<std::size_t> lags;
  for (std::size_t f = 0; f < energy.size(); ++f) {
    if (energy[f] < 0.3 * top) continue;
    const auto e = lpc_residual(w.samples.data() + f * frame, frame + hi);
    const std::size_t len = e.size() - hi;
    double peak = -1.0;
    std::size_t arg = 0;
    for (std::size_t lag = lo; lag <= hi; ++lag) {
      double xy = 0.0, xx = 0.0, yy = 0.0;
      for (std::size_t n = 0; n < len; ++n) {
        xy += e[n] * e[n + lag];
        xx += e[n] * e[n];
        yy += e[n + lag] * e[n + lag];
      }
      const double c = xy / std::sqrt(xx * yy + 1e-30);
      if (c > peak) peak = c, arg = lag;
    }
    peaks.push_back(peak);
    lags.push_back(arg);
  }
  const std::size_t mid = peaks.size() / 2;
  std::nth_element(peaks.begin(), peaks.begin() + mid, peaks.end());
  std::nth_element(lags.begin(), lags.begin() + mid, lags.end());
  return {peaks[mid], lags[mid]};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("mix_noise level examples") {
  const auto clean = sine(300.0, 8000, 0.4);
  const auto noise = random_waveform(5000, 2);
  auto r = mix_noise_components(clean, noise, {0.0, 1});
  CHECK(rms(r.noise) / rms(clean) == doctest::Approx(1.0).epsilon(1e-6));
  r = mix_noise_components(clean, noise, {-10.0, 1});
  CHECK(rms(r.noise) / rms(clean) == doctest::Approx(0.31623).epsilon(1e-5));
  REQUIRE(r.mixed.size() == clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    CHECK(r.mixed.samples[i] == doctest::Approx(clean.samples[i] + r.noise.samples[i]));
  }
}

TEST_CASE("mix_noise is deterministic per seed") {
  const auto clean = sine(200.0, 4000, 0.2);
  const auto noise = random_waveform(3000, 7);
  CHECK(mix_noise(clean, noise, {3.0, 5}).samples ==
        mix_noise(clean, noise, {3.0, 5}).samples);
  CHECK(mix_noise(clean, noise, {3.0, 5}).samples !=
        mix_noise(clean, noise, {3.0, 6}).samples);
}

TEST_CASE("mix_noise rejects silent inputs") {
  const Waveform silent{std::vector<float>(100)};
  const auto x = random_waveform(100, 1);
  CHECK_THROWS_AS(mix_noise(silent, x, {}), std::invalid_argument);
  CHECK_THROWS_AS(mix_noise(x, silent, {}), std::invalid_argument);
}

TEST_CASE("mixing hits the requested level within 0.01 dB") {
  Rng rng(11);
  for (int k = 0; k < 50; ++k) {
    const double level = rng.uniform(-10.0, 10.0);
    const auto clean = synth_utterance(k % 2 ? SpeechMode::kWhisper : SpeechMode::kNormal,
                                       1.0, 100 + k);
    const auto noise = make_noise(k % 3 ? NoiseKind::kPink : NoiseKind::kBabble,
                                  7000 + 100 * k, 200 + k);
    const auto r = mix_noise_components(clean, noise, {level, std::uint64_t(k)});
    CHECK(std::abs(level_of(r.noise, clean) - level) < 0.01);
  }
}

TEST_CASE("vib stopband and passband") {
  const auto hi = sine(5000.0, 32000, 0.5);
  const double floor = rms(hi) * std::pow(10.0, kSensorFloorDb / 20.0);
  CHECK(rms(vib_response(hi, SpeechMode::kNormal)) <= rms(hi) * 0.01);
  CHECK(rms(simulate_vib(hi, SpeechMode::kNormal, 1)) <= rms(hi) * 0.01 + floor);

  // Stopband at 3 kHz as well, away from the edges.
  const auto three = sine(3000.0, 32000, 0.5);
  CHECK(rms(vib_response(three, SpeechMode::kNormal)) <= rms(three) * 0.01);

  const auto mid = sine(500.0, 32000, 0.5);
  const double gain = rms(simulate_vib(mid, SpeechMode::kNormal, 2)) / rms(mid);
  CHECK(gain == doctest::Approx(std::pow(10.0, -6.0 / 20.0)).epsilon(0.1));
  const double whisper = rms(vib_response(mid, SpeechMode::kWhisper)) / rms(mid);
  CHECK(whisper == doctest::Approx(std::pow(10.0, -18.0 / 20.0)).epsilon(0.1));
}

TEST_CASE("vib removes a DC offset") {
  Waveform dc{std::vector<float>(32000, 0.5f)};
  const auto y = vib_response(dc, SpeechMode::kNormal);
  double mean = 0.0;
  for (float v : y.samples) mean += v;
  mean /= static_cast<double>(y.size());
  CHECK(std::abs(mean) < 0.005);
  // Away from the filter edges the output is essentially zero.
  for (std::size_t i = kVibTaps; i + kVibTaps < y.size(); ++i) {
    REQUIRE(std::abs(y.samples[i]) < 1e-3);
  }
}

TEST_CASE("vib is linear up to the sensor floor") {
  const auto x = synth_utterance(SpeechMode::kNormal, 1.0, 3);
  const auto base = vib_response(x, SpeechMode::kNormal);
  for (float a : {0.25f, 3.0f}) {
    Waveform ax = x;
    for (auto& v : ax.samples) v *= a;
    const auto lin = vib_response(ax, SpeechMode::kNormal);
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      worst = std::max(worst, std::abs(double(lin.samples[i]) - a * base.samples[i]));
    }
    CHECK(worst < 1e-6 * a);

    const auto noisy = simulate_vib(ax, SpeechMode::kNormal, 9);
    Waveform diff = noisy;
    for (std::size_t i = 0; i < x.size(); ++i) diff.samples[i] -= a * base.samples[i];
    const double floor = rms(ax) * std::pow(10.0, kSensorFloorDb / 20.0);
    CHECK(rms(diff) == doctest::Approx(floor).epsilon(0.1));
  }
}

TEST_CASE("normal and whisper modes separate by periodicity") {
  int ok = 0;
  for (std::uint64_t k = 0; k < 50; ++k) {
    const auto normal = periodicity(synth_utterance(SpeechMode::kNormal, 1.5, 500 + k));
    const auto whisper = periodicity(synth_utterance(SpeechMode::kWhisper, 1.5, 500 + k));
    INFO("seed ", k, " normal ", normal.peak, " whisper ", whisper.peak);
    CHECK(normal.peak >= 0.3);
    // The pitch peak sits inside the search range, not on its edge.
    CHECK(normal.lag > 64);
    CHECK(normal.lag < 200);
    CHECK(whisper.peak < 0.3);
    ok += (normal.peak >= 0.3) + (whisper.peak < 0.3);
  }
  CHECK(ok == 100);
}

TEST_CASE("utterances stay within 1 to 3 seconds in the corpus") {
  TempDir dir("corpus_len");
  const StubTeacher teacher;
  const auto m = gen_toy_corpus(6, 21, dir.path(), teacher);
  REQUIRE(m.entries.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& e = m.entries[i];
    CHECK(e.mode == (i % 2 ? SpeechMode::kWhisper : SpeechMode::kNormal));
    CHECK(e.level_db >= -10.0);
    CHECK(e.level_db <= 10.0);
    CHECK_FALSE(e.transcript_tokens.empty());
    const auto clean = read_waveform(m.resolve(e.clean_path));
    CHECK(clean.duration_seconds() >= 1.0);
    CHECK(clean.duration_seconds() <= 3.0);
    CHECK(read_waveform(m.resolve(e.vib_path)).size() == clean.size());
    const auto noisy = read_capture(m.resolve(e.noisy_path));
    CHECK(noisy.mic.size() == clean.size());
    CHECK(noisy.vib.size() == clean.size());
    CHECK(teacher.transcribe(clean).tokens == e.transcript_tokens);
  }
}

TEST_CASE("same seed gives a byte-identical corpus") {
  TempDir a("corpus_a"), b("corpus_b");
  const StubTeacher teacher;
  const auto ma = gen_toy_corpus(4, 5, a.path(), teacher);
  gen_toy_corpus(4, 5, b.path(), teacher);
  CHECK(slurp(a / kManifestName) == slurp(b / kManifestName));
  for (const auto& e : ma.entries) {
    for (const auto& rel : {e.clean_path, e.vib_path, e.noisy_path}) {
      CHECK(slurp(a / rel) == slurp(b / rel));
    }
  }
  TempDir c("corpus_c");
  gen_toy_corpus(4, 6, c.path(), teacher);
  CHECK(slurp(a / kManifestName) != slurp(c / kManifestName));
}

TEST_CASE("manifest round trip and lookup") {
  TempDir dir("manifest");
  CorpusManifest m{dir.path(), {}};
  m.entries.push_back({"u0", "clean/u0.wav", "vib/u0.wav", "noisy/u0.wav",
                       SpeechMode::kWhisper, -3.25, {1, 2, 3}});
  m.entries.push_back({"u1", "clean/u1.wav", "vib/u1.wav", "noisy/u1.wav",
                       SpeechMode::kNormal, 7.5, {63}});
  write_manifest(m);
  for (const auto& p : {dir / kManifestName, dir.path()}) {
    const auto back = read_manifest(p);
    REQUIRE(back.entries.size() == 2);
    CHECK(back.find("u0").mode == SpeechMode::kWhisper);
    CHECK(back.find("u0").level_db == -3.25);
    CHECK(back.find("u1").transcript_tokens == std::vector<int>{63});
    CHECK(back.resolve("clean/u1.wav") == dir / "clean/u1.wav");
  }
  CHECK_THROWS_AS(m.find("u9"), std::out_of_range);
  CHECK(parse_mode(mode_name(SpeechMode::kWhisper)) == SpeechMode::kWhisper);
  CHECK_THROWS(parse_mode("shout"));
}

TEST_CASE("build_training_batch") {
  TempDir dir("batch");
  const StubTeacher teacher;
  const auto m = gen_toy_corpus(2, 8, dir.path(), teacher);
  const std::vector<std::string> ids{m.entries[0].id};
  const auto b = build_training_batch(m, ids, {0.0, 3});
  REQUIRE(b.noisy.size() == 1);
  CHECK(rms(b.noisy[0].mic) / rms(b.clean[0]) ==
        doctest::Approx(std::sqrt(2.0)).epsilon(0.1));
  CHECK(b.labels[0].tokens == m.entries[0].transcript_tokens);

  const auto quiet = build_training_batch(m, ids, {-10.0, 3});
  const auto loud = build_training_batch(m, ids, {10.0, 3});
  CHECK(quiet.noisy[0].vib.samples == loud.noisy[0].vib.samples);
  CHECK(quiet.noisy[0].mic.samples != loud.noisy[0].mic.samples);

  const auto again = build_training_batch(m, ids, {0.0, 3});
  CHECK(again.noisy[0].mic.samples == b.noisy[0].mic.samples);
  CHECK(again.noisy[0].vib.samples == b.noisy[0].vib.samples);
  CHECK_THROWS_AS(build_training_batch(m, {"nope"}, {}), std::out_of_range);
}
