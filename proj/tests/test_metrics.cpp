// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "duovoce/metrics.hpp"
#include "duovoce/random.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace duovoce;
using duovoce::testing::random_waveform;
using duovoce::testing::TempDir;
namespace fixture = duovoce::testing::stoi_fixture;

namespace {

Waveform scaled(const Waveform& w, float a) {
  Waveform out = w;
  for (auto& v : out.samples) v *= a;
  return out;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// Small corpus shared by the evaluate() cases.
const CorpusManifest& corpus() {
  static TempDir dir("metrics_corpus");
  static const CorpusManifest m = gen_toy_corpus(4, 31, dir.path(), StubTeacher());
  return m;
}

}  // namespace

TEST_CASE("stoi of a signal with itself or a rescaled copy is 1") {
  for (int i = 0; i < 3; ++i) {
    const auto c = fixture::to_waveform(fixture::clean(i));
    CHECK(stoi(c, c) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(stoi(c, scaled(c, 2.0f)) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

nlohmann::json load_reference() {
  std::ifstream in(std::string(DUOVOCE_TEST_DATA) + "/stoi_reference.json");
  REQUIRE(in.good());
  const auto j = nlohmann::json::parse(in);
  REQUIRE(j["seconds"].get<double>() == fixture::kSeconds);
  return j;
}

TEST_CASE("stoi agrees with the reference implementation within 0.01") {
  const auto j = load_reference();
  REQUIRE(j["pairs"].size() == 20);
  for (const auto& p : j["pairs"]) {
    const int idx = p["index"].get<int>();
    const double snr = p["snr_db"].get<double>();
    const auto c = fixture::clean(idx);
    const double mine = stoi(fixture::to_waveform(c),
                             fixture::to_waveform(fixture::degraded(c, idx, snr)));
    INFO("pair ", idx, " at ", snr, " dB");
    CHECK(std::abs(mine - p["stoi"].get<double>()) <= 0.01);
  }
}

TEST_CASE("stoi against independent noise matches the reference and ranks lowest") {
  // The reference scores pure noise well above zero on these signals (about
  // 0.5): the clipping step bounds the noise envelope by the clean one.
  const auto j = load_reference();
  REQUIRE(j["noise_pairs"].size() == 10);
  for (const auto& p : j["noise_pairs"]) {
    const int idx = p["index"].get<int>();
    const auto c = fixture::clean(idx);
    const auto clean = fixture::to_waveform(c);
    const double mine =
        stoi(clean, fixture::to_waveform(fixture::noise_only(idx, c.size())));
    INFO("pair ", idx);
    CHECK(std::abs(mine - p["stoi"].get<double>()) <= 0.01);
    CHECK(mine < stoi(clean, fixture::to_waveform(fixture::degraded(c, idx, -10.0))));
  }
  // Speech-like utterances: noise stays far below a -10 dB mixture.
  for (std::uint64_t k = 0; k < 10; ++k) {
    const auto c = synth_utterance(SpeechMode::kNormal, 1.5, k);
    const auto noise = random_waveform(c.size(), 100 + k, 0.1);
    const auto mixed = mix_noise(c, noise, {-10.0, k});
    CHECK(stoi(c, noise) + 0.3 < stoi(c, mixed));
  }
}

TEST_CASE("stoi errors") {
  const auto c = fixture::to_waveform(fixture::clean(0));
  CHECK_THROWS_AS(stoi(c, random_waveform(c.size() - 1, 1)), std::invalid_argument);
  const auto shorter = random_waveform(3000, 2);
  CHECK_THROWS_AS(stoi(shorter, shorter), std::invalid_argument);
}

TEST_CASE("resample_poly output length and passband") {
  std::vector<double> x(16000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2 * std::numbers::pi * 440.0 * i / 16000.0);
  const auto y = resample_poly(x, 5, 8);
  CHECK(y.size() == 10000);
  double peak = 0.0;
  for (std::size_t i = 1000; i < 9000; ++i) peak = std::max(peak, std::abs(y[i]));
  CHECK(peak == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("wer and cer examples") {
  CHECK(wer({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(wer({1, 2, 3}, {1, 9, 3}) == doctest::Approx(1.0 / 3.0));
  CHECK(wer({1, 2, 3, 4}, {}) == 1.0);
  CHECK(wer({1}, {2, 3, 4}) == 3.0);
  CHECK_THROWS_AS(wer({}, {1}), std::invalid_argument);
  CHECK(cer("abc", "abc") == 0.0);
  CHECK(cer("abc", "abd") == doctest::Approx(1.0 / 3.0));
  CHECK(cer("ab", "abxy") == 1.0);
  CHECK(token_cer({9}, {9}) == 0.0);
  // Tokens 9 and 10 spell as "11" and "12" in base 8: one symbol differs.
  CHECK(token_cer({9}, {10}) == 0.5);
  CHECK(spell({9, 63}) == std::vector<int>{1, 1, 7, 7});
}

TEST_CASE("edit distance obeys the triangle inequality") {
  Rng rng(3);
  const auto draw = [&] {
    std::vector<int> v(1 + rng.uniform_int(12));
    for (auto& t : v) t = static_cast<int>(rng.uniform_int(5));
    return v;
  };
  for (int k = 0; k < 300; ++k) {
    const auto a = draw(), b = draw(), c = draw();
    CHECK(edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c));
    CHECK(edit_distance(a, b) == edit_distance(b, a));
    CHECK(wer(a, c) <= wer(a, b) + wer(b, c) * b.size() / a.size() + 1e-12);
  }
}

TEST_CASE("unity-mask enhancement at -10 dB scores about +10 dB") {
  const auto model = build(DdccrnConfig{{4, 8}, 5, 2, {}, 8}, 1);
  EvalOptions opts;
  opts.levels = {-10.0};
  opts.channels = {Channel::kEnhanced, Channel::kMic};
  opts.forward.mask = MaskOverride::kUnity;
  opts.seed = 4;
  const StubTeacher teacher;
  const auto report = evaluate(corpus(), &model, teacher, opts);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : report.records) {
    if (r.channel != Channel::kEnhanced) continue;
    sum += r.si_sdr_db;
    ++n;
  }
  REQUIRE(n == corpus().entries.size());
  CHECK(sum / n == doctest::Approx(10.0).epsilon(0.1));
}

TEST_CASE("clean channel scores perfectly everywhere") {
  EvalOptions opts;
  opts.channels = {Channel::kClean};
  const auto report = evaluate(corpus(), nullptr, StubTeacher(), opts);
  CHECK(report.records.size() == corpus().entries.size() * opts.levels.size());
  for (const auto& [key, cell] : report.aggregates) {
    CHECK(cell.stoi == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(cell.wer == 0.0);
    CHECK(cell.cer == 0.0);
  }
}

TEST_CASE("evaluate needs a model for the enhanced channel") {
  EvalOptions opts;
  CHECK_THROWS(evaluate(corpus(), nullptr, StubTeacher(), opts));
}

TEST_CASE("aggregates are the means of the records; reports are deterministic") {
  EvalOptions opts;
  opts.channels = {Channel::kMic, Channel::kVib};
  opts.seed = 8;
  const StubTeacher teacher;
  const auto report = evaluate(corpus(), nullptr, teacher, opts);
  std::map<CellKey, std::pair<std::size_t, double>> stoi_sum, wer_sum;
  for (const auto& r : report.records) {
    CHECK(r.stoi >= -1.0);
    CHECK(r.stoi <= 1.0);
    CHECK(r.wer >= 0.0);
    CHECK(r.cer >= 0.0);
    const CellKey key{r.channel, r.mode, r.level_db};
    stoi_sum[key].first++;
    stoi_sum[key].second += r.stoi;
    wer_sum[key].second += r.wer;
  }
  REQUIRE(stoi_sum.size() == report.aggregates.size());
  for (const auto& [key, cell] : report.aggregates) {
    const auto n = stoi_sum.at(key).first;
    CHECK(cell.count == n);
    CHECK(cell.stoi == doctest::Approx(stoi_sum.at(key).second / n));
    CHECK(cell.wer == doctest::Approx(wer_sum.at(key).second / n));
  }
  const auto again = evaluate(corpus(), nullptr, teacher, opts);
  CHECK(report_json(again) == report_json(report));
}

TEST_CASE("mic STOI does not rise as the noise level rises") {
  EvalOptions opts;
  opts.channels = {Channel::kMic};
  opts.seed = 2;
  const auto report = evaluate(corpus(), nullptr, StubTeacher(), opts);
  std::map<std::string, std::map<double, double>> by_id;
  for (const auto& r : report.records) by_id[r.id][r.level_db] = r.stoi;
  for (const auto& [id, curve] : by_id) {
    REQUIRE(curve.size() == 4);
    for (auto it = std::next(curve.begin()); it != curve.end(); ++it) {
      INFO(id, " at ", it->first, " dB");
      CHECK(it->second <= std::prev(it)->second + 0.02);
    }
  }
}

TEST_CASE("CSV grid and written report files") {
  EvalOptions opts;
  opts.channels = {Channel::kMic, Channel::kVib};
  const auto report = evaluate(corpus(), nullptr, StubTeacher(), opts);
  const auto rows = lines(report_csv(report, Channel::kMic));
  REQUIRE(rows.size() == 1 + opts.levels.size());
  CHECK(rows[0] == "level_db,wer_normal,wer_whisper,cer_normal,cer_whisper,"
                   "stoi_normal,stoi_whisper");
  for (const auto& row : rows) CHECK(std::count(row.begin(), row.end(), ',') == 6);
  CHECK(rows[1].rfind("-20,", 0) == 0);

  TempDir dir("report");
  write_report(report, dir / "eval");
  for (const char* f : {"eval.json", "eval.csv", "eval.mic.csv", "eval.vib.csv"}) {
    CHECK_MESSAGE(std::filesystem::exists(dir / f), f);
  }
  const auto j = nlohmann::json::parse(std::ifstream(dir / "eval.json"));
  CHECK(j["records"].size() == report.records.size());
}
