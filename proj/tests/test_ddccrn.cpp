// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <complex>
#include <numbers>

#include "doctest.h"
#include "duovoce/ddccrn.hpp"
#include "duovoce/verify.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace duovoce;
using duovoce::testing::random_waveform;
using duovoce::testing::TempDir;

namespace {

DdccrnConfig toy_config() {
  DdccrnConfig cfg;
  cfg.encoder_channels = {8, 16};
  cfg.lstm_hidden = 32;
  return cfg;
}

// Parameter count from the layer list alone: encoder convs, complex LSTM
// stack (two real LSTMs per layer), dense back to the bottleneck, decoder
// transposed convs that take the skip-concatenated channels.
std::size_t closed_form(const DdccrnConfig& cfg) {
  const std::size_t k = cfg.kernel_h * cfg.kernel_w;
  const auto conv = [&](std::size_t in, std::size_t out) {
    return 2 * out * in * k + 2 * out;
  };
  // Stride-2 "same" padding halves the bins, rounding up.
  std::size_t f = cfg.stft.fft_size / 2 + 1;
  std::size_t total = 0, in = 2;
  for (std::size_t c : cfg.encoder_channels) {
    total += conv(in, c);
    in = c;
    f = (f + 1) / 2;
  }
  const std::size_t bottleneck = cfg.encoder_channels.back() * f;
  const std::size_t h = cfg.lstm_hidden;
  std::size_t lstm_in = bottleneck;
  for (std::size_t l = 0; l < cfg.lstm_layers; ++l) {
    total += 2 * (lstm_in * 4 * h + h * 4 * h + 4 * h);
    lstm_in = h;
  }
  total += 2 * h * bottleneck + 2 * bottleneck;
  for (std::size_t s = 0; s < cfg.encoder_channels.size(); ++s) {
    const std::size_t out = s == 0 ? 1 : cfg.encoder_channels[s - 1];
    total += conv(2 * cfg.encoder_channels[s], out);
  }
  return total;
}

DualCapture random_capture(std::size_t n, std::uint64_t seed) {
  return {random_waveform(n, seed, 0.3), random_waveform(n, seed + 1, 0.3)};
}

}  // namespace

TEST_CASE("build is deterministic per seed") {
  const auto a = build(toy_config(), 7), b = build(toy_config(), 7);
  CHECK(serialize_checkpoint(a.params) == serialize_checkpoint(b.params));
  for (const char* name : {"enc.0.W_re", "enc.1.b_im", "lstm.0.real.W_hh",
                           "dense.W_im", "dec.0.W_re"}) {
    CHECK_MESSAGE(a.params.count(name) == 1, name);
  }
  const auto c = build(toy_config(), 8);
  CHECK(serialize_checkpoint(a.params) != serialize_checkpoint(c.params));
}

TEST_CASE("count_params matches the closed form") {
  CHECK(count_params(build(toy_config(), 7)) == closed_form(toy_config()));

  DdccrnConfig deep;
  deep.encoder_channels = {4, 8, 8};
  deep.lstm_hidden = 16;
  deep.lstm_layers = 2;
  CHECK(count_params(build(deep, 1)) == closed_form(deep));

  DdccrnConfig wide = toy_config();
  wide.kernel_h = 3;
  wide.kernel_w = 3;
  CHECK(count_params(build(wide, 1)) == closed_form(wide));
}

TEST_CASE("count_params examples") {
  CHECK(count_params(DdccrnModel{}) == 0);
  Rng rng(1);
  DdccrnModel one;
  init_complex_conv(one.params, "c", 1, 1, 1, 1, false, rng);
  CHECK(count_params(one) == 4);
}

TEST_CASE("unity mask reproduces istft(stft(mic))") {
  const auto model = build(toy_config(), 3);
  const auto cap = random_capture(4000, 10);
  const auto y = forward(model, cap, {MaskOverride::kUnity});
  const auto ref = istft(stft(cap.mic, model.config.stft));
  REQUIRE(y.size() == cap.mic.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    worst = std::max(worst, std::abs(double(y.samples[i]) - ref.samples[i]));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("zero mask gives silence") {
  const auto model = build(toy_config(), 3);
  const auto y = forward(model, random_capture(3000, 11), {MaskOverride::kZero});
  for (float v : y.samples) CHECK(v == 0.0f);
}

TEST_CASE("forward preserves length and stays finite") {
  const auto model = build(toy_config(), 4);
  for (std::size_t n : {400u, 1601u, 3333u, 8000u}) {
    const auto y = forward(model, random_capture(n, n));
    CHECK(y.size() == n);
    for (float v : y.samples) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("forward rejects input shorter than one frame") {
  const auto model = build(toy_config(), 4);
  CHECK_THROWS(forward(model, random_capture(100, 1)));
}

TEST_CASE("forward is deterministic and uses the vib channel") {
  const auto model = build(toy_config(), 5);
  auto cap = random_capture(3200, 12);
  const auto a = forward(model, cap), b = forward(model, cap);
  CHECK(a.samples == b.samples);
  std::fill(cap.vib.samples.begin(), cap.vib.samples.end(), 0.0f);
  const auto c = forward(model, cap);
  double l2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) l2 += std::pow(a.samples[i] - c.samples[i], 2);
  CHECK(l2 > 0.0);
}

TEST_CASE("mask_apply polar examples") {
  ComplexSpectrogram spec;
  spec.real = Matrix(2, 3);
  spec.imag = Matrix(2, 3);
  Rng rng(6);
  for (auto& v : spec.real.data) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : spec.imag.data) v = static_cast<float>(rng.uniform(-1, 1));
  const double t1 = std::tanh(1.0);
  CHECK(t1 == doctest::Approx(0.7616).epsilon(1e-4));

  ComplexSpectrogram one = spec, imag_unit = spec, zero = spec;
  std::fill(one.real.data.begin(), one.real.data.end(), 1.0f);
  std::fill(one.imag.data.begin(), one.imag.data.end(), 0.0f);
  std::fill(imag_unit.real.data.begin(), imag_unit.real.data.end(), 0.0f);
  std::fill(imag_unit.imag.data.begin(), imag_unit.imag.data.end(), 1.0f);
  std::fill(zero.real.data.begin(), zero.real.data.end(), 0.0f);
  std::fill(zero.imag.data.begin(), zero.imag.data.end(), 0.0f);

  const auto a = mask_apply(spec, one);
  const auto b = mask_apply(spec, imag_unit);
  const auto z = mask_apply(spec, zero);
  for (std::size_t i = 0; i < 6; ++i) {
    const std::complex<double> s{spec.real.data[i], spec.imag.data[i]};
    const std::complex<double> ya{a.real.data[i], a.imag.data[i]};
    const std::complex<double> yb{b.real.data[i], b.imag.data[i]};
    CHECK(std::abs(ya) == doctest::Approx(t1 * std::abs(s)).epsilon(1e-5));
    CHECK(std::arg(ya / s) == doctest::Approx(0.0).epsilon(1e-5));
    CHECK(std::abs(yb) == doctest::Approx(t1 * std::abs(s)).epsilon(1e-5));
    CHECK(std::arg(yb / s) == doctest::Approx(std::numbers::pi / 2).epsilon(1e-5));
    CHECK(z.real.data[i] == 0.0f);
    CHECK(z.imag.data[i] == 0.0f);
  }
  ComplexSpectrogram small = spec;
  small.real = Matrix(1, 3);
  small.imag = Matrix(1, 3);
  CHECK_THROWS(mask_apply(spec, small));
}

TEST_CASE("mask magnitude never exceeds one") {
  Rng rng(7);
  BasicComplexTensor<double> spec{TensorD(Shape{50}, 1.0), TensorD(Shape{50}, 0.0)};
  BasicComplexTensor<double> mask{TensorD(Shape{50}), TensorD(Shape{50})};
  for (auto& v : mask.re.data()) v = rng.uniform(-20, 20);
  for (auto& v : mask.im.data()) v = rng.uniform(-20, 20);
  const auto y = mask_apply(spec, mask);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(std::hypot(y.re.data()[i], y.im.data()[i]) <= 1.0);
  }
}

TEST_CASE("config JSON uses the documented field names and round-trips") {
  DdccrnConfig cfg = toy_config();
  cfg.stride_freq = {2, 2};
  cfg.stft.window = WindowType::kHamming;
  const auto text = config_to_json(cfg);
  const auto j = nlohmann::json::parse(text);
  for (const char* key : {"encoder_channels", "kernel", "stride_freq", "lstm_hidden",
                          "lstm_layers", "mask_variant", "stft"}) {
    CHECK_MESSAGE(j.contains(key), key);
  }
  for (const char* key : {"fft_size", "win_length", "hop_length", "window"}) {
    CHECK_MESSAGE(j["stft"].contains(key), key);
  }
  CHECK(config_from_json(text) == cfg);
}

TEST_CASE("config validation") {
  DdccrnConfig cfg = toy_config();
  cfg.encoder_channels.clear();
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg = toy_config();
  cfg.stride_freq = {2};
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg = toy_config();
  cfg.mask_variant = "C";
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg = toy_config();
  cfg.lstm_hidden = 0;
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  CHECK_THROWS_AS(build(cfg, 1), std::invalid_argument);
  CHECK_THROWS(config_from_json("{\"encoder_channels\": \"wide\"}"));
}

TEST_CASE("save and load restore the model exactly") {
  TempDir dir("model");
  const auto model = build(toy_config(), 9);
  save_model(model, dir / "m.ckpt");
  CHECK(std::filesystem::exists(dir / "m.ckpt.json"));
  const auto back = load_model(dir / "m.ckpt");
  CHECK(back.config == model.config);
  CHECK(serialize_checkpoint(back.params) == serialize_checkpoint(model.params));
  std::filesystem::remove(dir / "m.ckpt.json");
  CHECK_THROWS_AS(load_model(dir / "m.ckpt"), CheckpointError);
}

TEST_CASE("enhance_file: zero in, zero out, same duration") {
  TempDir dir("enhance");
  const auto model = build(toy_config(), 2);
  DualCapture silent{Waveform{std::vector<float>(4800, 0.0f)},
                     Waveform{std::vector<float>(4800, 0.0f)}};
  write_wav(dir / "in.wav", silent);
  const auto res = enhance_file(model, dir / "in.wav", dir / "out.wav");
  CHECK(res.samples == 4800);
  CHECK(std::isfinite(res.seconds));
  CHECK(res.seconds > 0.0);
  const auto out = read_waveform(dir / "out.wav");
  CHECK(out.size() == 4800);
  for (float v : out.samples) CHECK(v == 0.0f);
  CHECK_THROWS_AS(enhance_file(model, dir / "absent.wav", dir / "x.wav"), WavError);
}

TEST_CASE("network ops pass the finite-difference oracle") {
  for (const auto& o : run_checks(gradcheck_suite("ddccrn"))) {
    INFO(o.op, " ", o.error);
    CHECK(o.result.max_rel_error < kGradCheckTolerance);
  }
}
