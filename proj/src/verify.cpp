// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "duovoce/verify.hpp"

#include <chrono>
#include <limits>
#include <stdexcept>

#include "duovoce/complex_nn.hpp"
#include "duovoce/ddccrn.hpp"
#include "duovoce/losses.hpp"
#include "duovoce/random.hpp"
#include "duovoce/spectral.hpp"
#include "duovoce/teacher.hpp"

namespace duovoce {

namespace {

using CT = BasicComplexTensor<double>;

constexpr double kStep = 1e-5;
// The full network has many leaky-ReLU kinks near zero; a smaller step keeps
// the differences from straddling them.
constexpr double kNetworkStep = 1e-6;

TensorD uniform(Shape shape, double lo, double hi, Rng& rng) {
  TensorD t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Magnitudes in [0.2, 1] with random sign, away from the kinks at zero.
TensorD signed_away_from_zero(Shape shape, Rng& rng) {
  TensorD t(std::move(shape));
  for (auto& v : t.data()) {
    v = rng.uniform(0.2, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  }
  return t;
}

// Contracts y with fixed random weights so every output element carries a
// distinct gradient.
struct Probe {
  std::uint64_t seed;

  TensorD operator()(const TensorD& y) const {
    Rng rng(seed);
    return sum(mul(y, uniform(y.shape(), -1.0, 1.0, rng)));
  }
  TensorD operator()(const CT& y) const {
    Rng rng(seed);
    const auto wr = uniform(y.re.shape(), -1.0, 1.0, rng);
    const auto wi = uniform(y.im.shape(), -1.0, 1.0, rng);
    return add(sum(mul(y.re, wr)), sum(mul(y.im, wi)));
  }
};

GradCheckResult check(const std::function<TensorD()>& f,
                      std::vector<TensorD> params,
                      std::size_t coords_per_tensor = 0,
                      double step = kStep) {
  GradCheckOptions opts;
  opts.eps = step;
  opts.max_coords_per_tensor = coords_per_tensor;
  opts.seed = 7;
  return grad_check<double>(f, std::move(params), opts);
}

std::vector<TensorD> values(const ParamMap<double>& params) {
  std::vector<TensorD> out;
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

// ------------------------------------------------------------------ tensor

using Unary = std::function<TensorD(const TensorD&)>;

OpCheck unary_check(std::string op, Unary fn, double lo, double hi) {
  return {"tensor", op, [fn, lo, hi] {
            Rng rng(11);
            auto x = uniform({3, 4}, lo, hi, rng);
            Probe probe{12};
            return check([&] { return probe(fn(x)); }, {x});
          }};
}

OpCheck kinked_check(std::string op, Unary fn) {
  return {"tensor", op, [fn] {
            Rng rng(13);
            auto x = signed_away_from_zero({3, 4}, rng);
            Probe probe{14};
            return check([&] { return probe(fn(x)); }, {x});
          }};
}

using Binary = std::function<TensorD(const TensorD&, const TensorD&)>;

OpCheck binary_check(std::string op, Binary fn, Shape a_shape, Shape b_shape,
                     double b_lo = -1.0) {
  return {"tensor", op, [=] {
            Rng rng(15);
            auto a = uniform(a_shape, -1.0, 1.0, rng);
            auto b = uniform(b_shape, b_lo, 1.5, rng);
            Probe probe{16};
            return check([&] { return probe(fn(a, b)); }, {a, b});
          }};
}

std::vector<OpCheck> tensor_checks() {
  std::vector<OpCheck> out;
  out.push_back(binary_check("add", add<double>, {3, 4}, {4}));
  out.push_back(binary_check("sub", sub<double>, {2, 3}, {2, 1}));
  out.push_back(binary_check("mul", mul<double>, {2, 3, 2}, {3, 1}));
  out.push_back(binary_check("div", div<double>, {3, 4}, {3, 4}, 0.5));
  out.push_back(unary_check("neg", neg<double>, -1, 1));
  out.push_back(unary_check(
      "scale", [](const TensorD& x) { return scale(x, -2.5); }, -1, 1));
  out.push_back(unary_check(
      "add_scalar", [](const TensorD& x) { return add_scalar(x, 0.7); }, -1, 1));
  out.push_back(unary_check("square", square<double>, -1, 1));
  out.push_back(unary_check("sqrt", sqrt<double>, 0.5, 2.0));
  out.push_back(unary_check("exp", exp<double>, -1, 1));
  out.push_back(unary_check("log", log<double>, 0.5, 2.0));
  out.push_back(unary_check("sigmoid", sigmoid<double>, -2, 2));
  out.push_back(unary_check("tanh", tanh<double>, -2, 2));
  out.push_back(kinked_check("relu", relu<double>));
  out.push_back(kinked_check(
      "leaky_relu", [](const TensorD& x) { return leaky_relu(x, 0.1); }));
  out.push_back(kinked_check(
      "clamp_min", [](const TensorD& x) { return clamp_min(x, 0.0); }));
  out.push_back(binary_check("matmul", matmul<double>, {3, 4}, {4, 5}));
  out.push_back({"tensor", "conv2d", [] {
                   Rng rng(17);
                   auto x = uniform({2, 2, 5, 4}, -1, 1, rng);
                   auto w = uniform({3, 2, 3, 2}, -1, 1, rng);
                   auto b = uniform({3}, -1, 1, rng);
                   Probe probe{18};
                   const Conv2dParams p{2, 1, 1, 1};
                   return check([&] { return probe(conv2d(x, w, b, p)); },
                                {x, w, b});
                 }});
  out.push_back({"tensor", "conv2d_transpose", [] {
                   Rng rng(19);
                   auto x = uniform({2, 2, 3, 3}, -1, 1, rng);
                   auto w = uniform({2, 3, 3, 2}, -1, 1, rng);
                   auto b = uniform({3}, -1, 1, rng);
                   Probe probe{20};
                   const Conv2dParams p{2, 1, 1, 0};
                   return check(
                       [&] { return probe(conv2d_transpose(x, w, b, p)); },
                       {x, w, b});
                 }});
  out.push_back(binary_check(
      "concat",
      [](const TensorD& a, const TensorD& b) {
        return concat<double>({a, b}, 1);
      },
      {2, 3, 2}, {2, 1, 2}));
  out.push_back(unary_check(
      "slice",
      [](const TensorD& x) { return slice(x, 1, 1, 2); }, -1, 1));
  out.push_back(unary_check(
      "reshape", [](const TensorD& x) { return reshape(x, {2, 6}); }, -1, 1));
  out.push_back({"tensor", "permute", [] {
                   Rng rng(21);
                   auto x = uniform({2, 3, 4}, -1, 1, rng);
                   Probe probe{22};
                   return check([&] { return probe(permute(x, {2, 0, 1})); },
                                {x});
                 }});
  out.push_back(unary_check(
      "sum", [](const TensorD& x) { return scale(sum(x), 1.3); }, -1, 1));
  out.push_back(unary_check(
      "sum_axis", [](const TensorD& x) { return sum(x, 0); }, -1, 1));
  out.push_back(unary_check(
      "mean", [](const TensorD& x) { return scale(mean(x), 1.3); }, -1, 1));
  out.push_back(unary_check("softmax", softmax<double>, -2, 2));
  out.push_back(unary_check(
      "standardize_rows",
      [](const TensorD& x) { return standardize_rows(x, 1e-5); }, -1, 1));
  return out;
}

// ---------------------------------------------------------------- spectral

StftConfig toy_stft() { return {64, 48, 12, WindowType::kHann}; }

std::vector<OpCheck> spectral_checks() {
  std::vector<OpCheck> out;
  out.push_back({"spectral", "stft", [] {
                   Rng rng(31);
                   auto x = uniform({2, 96}, -1, 1, rng);
                   Probe probe{32};
                   return check(
                       [&] {
                         const auto s = stft(x, toy_stft());
                         return add(probe(s.re), probe(s.im));
                       },
                       {x}, 24);
                 }});
  out.push_back({"spectral", "istft", [] {
                   Rng rng(33);
                   const auto cfg = toy_stft();
                   const std::size_t frames = stft_frame_count(96, cfg);
                   auto re = uniform({2, 1, cfg.bins(), frames}, -1, 1, rng);
                   auto im = uniform({2, 1, cfg.bins(), frames}, -1, 1, rng);
                   Probe probe{34};
                   return check([&] { return probe(istft(re, im, cfg, 96)); },
                                {re, im}, 24);
                 }});
  out.push_back({"spectral", "log_mel", [] {
                   Rng rng(35);
                   const auto cfg = toy_stft();
                   const MelConfig mel{8, 0.0, 8000.0, kCanonicalRate};
                   const auto fb = filterbank_tensor<double>(mel, cfg.fft_size);
                   auto x = uniform({2, 96}, -1, 1, rng);
                   Probe probe{36};
                   return check(
                       [&] { return probe(log_mel(stft(x, cfg), fb)); }, {x},
                       24);
                 }});
  return out;
}

// -------------------------------------------------------------- complex_nn

CT complex_input(Shape shape, Rng& rng) {
  return {uniform(shape, -1, 1, rng), uniform(shape, -1, 1, rng)};
}

std::vector<OpCheck> complex_checks() {
  std::vector<OpCheck> out;
  out.push_back({"complex_nn", "complex_conv2d", [] {
                   Rng init(41);
                   ParamMap<float> pf;
                   init_complex_conv(pf, "c", 2, 3, 3, 2, false, init);
                   auto p = cast_params<double>(pf);
                   auto layer = bind_complex_conv(p, "c", {2, 1, 1, 1});
                   Rng rng(42);
                   auto x = complex_input({1, 2, 5, 3}, rng);
                   Probe probe{43};
                   auto params = values(p);
                   params.push_back(x.re);
                   params.push_back(x.im);
                   return check([&] { return probe(complex_conv2d(x, layer)); },
                                params);
                 }});
  out.push_back({"complex_nn", "complex_conv2d_transpose", [] {
                   Rng init(44);
                   ParamMap<float> pf;
                   init_complex_conv(pf, "c", 2, 3, 3, 2, true, init);
                   auto p = cast_params<double>(pf);
                   auto layer = bind_complex_conv(p, "c", {2, 1, 1, 0});
                   Rng rng(45);
                   auto x = complex_input({1, 2, 3, 3}, rng);
                   Probe probe{46};
                   auto params = values(p);
                   params.push_back(x.re);
                   params.push_back(x.im);
                   return check(
                       [&] { return probe(complex_conv2d_transpose(x, layer)); },
                       params);
                 }});
  out.push_back({"complex_nn", "lstm", [] {
                   Rng init(47);
                   ParamMap<float> pf;
                   init_complex_lstm(pf, "l", 3, 4, init);
                   auto p = cast_params<double>(pf);
                   auto layer = bind_complex_lstm(p, "l");
                   Rng rng(48);
                   auto x = uniform({3, 2, 3}, -1, 1, rng);
                   Probe probe{49};
                   return check([&] { return probe(lstm(x, layer.real)); },
                                {x, layer.real.w_ih, layer.real.w_hh,
                                 layer.real.bias});
                 }});
  out.push_back({"complex_nn", "complex_lstm", [] {
                   Rng init(50);
                   ParamMap<float> pf;
                   init_complex_lstm(pf, "l", 3, 4, init);
                   auto p = cast_params<double>(pf);
                   auto layer = bind_complex_lstm(p, "l");
                   Rng rng(51);
                   auto x = complex_input({3, 2, 3}, rng);
                   Probe probe{52};
                   auto params = values(p);
                   params.push_back(x.re);
                   params.push_back(x.im);
                   return check([&] { return probe(complex_lstm(x, layer)); },
                                params);
                 }});
  out.push_back({"complex_nn", "complex_dense", [] {
                   Rng init(53);
                   ParamMap<float> pf;
                   init_complex_dense(pf, "d", 4, 3, init);
                   auto p = cast_params<double>(pf);
                   auto layer = bind_complex_dense(p, "d");
                   // Zero-initialized biases still need a generic value.
                   Rng rng(54);
                   for (auto* b : {&layer.b_re, &layer.b_im}) {
                     for (auto& v : b->data()) v = rng.uniform(-1, 1);
                   }
                   auto x = complex_input({2, 4}, rng);
                   Probe probe{55};
                   auto params = values(p);
                   params.push_back(x.re);
                   params.push_back(x.im);
                   return check([&] { return probe(complex_dense(x, layer)); },
                                params);
                 }});
  out.push_back({"complex_nn", "complex_norm", [] {
                   Rng rng(56);
                   auto x = complex_input({2, 2, 3, 2}, rng);
                   Probe probe{57};
                   return check([&] { return probe(complex_norm(x)); },
                                {x.re, x.im});
                 }});
  out.push_back({"complex_nn", "complex_leaky_relu", [] {
                   Rng rng(58);
                   CT x{signed_away_from_zero({2, 3}, rng),
                        signed_away_from_zero({2, 3}, rng)};
                   Probe probe{59};
                   return check(
                       [&] { return probe(complex_leaky_relu(x, kLeakySlope)); },
                       {x.re, x.im});
                 }});
  return out;
}

// ------------------------------------------------------------------ ddccrn

DdccrnConfig toy_model() {
  DdccrnConfig cfg;
  cfg.encoder_channels = {4, 8};
  cfg.lstm_hidden = 8;
  return cfg;
}

std::vector<OpCheck> ddccrn_checks() {
  std::vector<OpCheck> out;
  out.push_back({"ddccrn", "mask_apply", [] {
                   Rng rng(61);
                   auto spec = complex_input({1, 1, 4, 3}, rng);
                   auto mask = complex_input({1, 1, 4, 3}, rng);
                   Probe probe{62};
                   return check([&] { return probe(mask_apply(spec, mask)); },
                                {spec.re, spec.im, mask.re, mask.im});
                 }});
  out.push_back({"ddccrn", "estimate_mask", [] {
                   const auto cfg = toy_model();
                   auto p = cast_params<double>(build(cfg, 3).params);
                   Rng rng(63);
                   const std::size_t f = cfg.stft.bins();
                   auto x = complex_input({1, 2, f, 4}, rng);
                   Probe probe{64};
                   auto params = values(p);
                   params.push_back(x.re);
                   return check(
                       [&] { return probe(estimate_mask(cfg, p, x)); }, params,
                       6);
                 }});
  // Enhancement loss through the full forward pass on 0.2 s of audio.
  out.push_back({"ddccrn", "forward_l_ae", [] {
                   const auto cfg = toy_model();
                   auto p = cast_params<double>(build(cfg, 4).params);
                   Rng rng(65);
                   const std::size_t len = kCanonicalRate / 5;
                   auto mic = uniform({1, len}, -0.3, 0.3, rng);
                   auto vib = uniform({1, len}, -0.3, 0.3, rng);
                   auto clean = uniform({1, len}, -0.3, 0.3, rng);
                   const AeLossConfig ae{cfg.stft, MelConfig{}, 0.1};
                   const auto fb =
                       filterbank_tensor<double>(ae.mel, cfg.stft.fft_size);
                   return check(
                       [&] {
                         const auto enh = forward_batch(cfg, p, mic, vib);
                         return l_ae(clean, enh, ae, fb);
                       },
                       values(p), 4, kNetworkStep);
                 }});
  return out;
}

// ------------------------------------------------------------------ losses

std::vector<OpCheck> loss_checks() {
  std::vector<OpCheck> out;
  out.push_back({"losses", "si_sdr", [] {
                   Rng rng(71);
                   auto ref = uniform({2, 64}, -1, 1, rng);
                   auto est = uniform({2, 64}, -1, 1, rng);
                   Probe probe{72};
                   return check([&] { return probe(si_sdr(ref, est)); },
                                {est});
                 }});
  out.push_back({"losses", "l_ae", [] {
                   Rng rng(73);
                   const std::size_t len = 1600;
                   auto clean = uniform({1, len}, -0.5, 0.5, rng);
                   auto enh = uniform({1, len}, -0.5, 0.5, rng);
                   const AeLossConfig ae;
                   const auto fb =
                       filterbank_tensor<double>(ae.mel, ae.stft.fft_size);
                   return check([&] { return l_ae(clean, enh, ae, fb); }, {enh},
                                32);
                 }});
  out.push_back({"losses", "l_hard", [] {
                   Rng rng(74);
                   auto logits = uniform({2, 3, 5}, -2, 2, rng);
                   const TokenBatch labels{{0, 4, 2}, {3, 3, 1}};
                   return check(
                       [&] { return l_hard(softmax(logits), labels); },
                       {logits});
                 }});
  out.push_back({"losses", "l_soft", [] {
                   Rng rng(75);
                   auto q = softmax(uniform({2, 3, 5}, -2, 2, rng));
                   auto logits = uniform({2, 3, 5}, -2, 2, rng);
                   return check([&] { return l_soft(q, softmax(logits)); },
                                {logits});
                 }});
  // Distillation losses through the frozen teacher, w.r.t. the waveform.
  out.push_back({"losses", "teacher_l_hard", [] {
                   const StubTeacher teacher;
                   Rng rng(76);
                   auto wave = uniform({1, 1600}, -0.3, 0.3, rng);
                   const auto labels = [&] {
                     NoGradScope ng;
                     return teacher.greedy(
                         teacher.encode(wave).cast<float>());
                   }();
                   return check(
                       [&] {
                         return l_hard(
                             teacher.decode(teacher.encode(wave), labels),
                             labels);
                       },
                       {wave}, 32);
                 }});
  out.push_back({"losses", "teacher_l_soft", [] {
                   const StubTeacher teacher;
                   Rng rng(77);
                   auto clean = uniform({1, 1600}, -0.3, 0.3, rng);
                   auto enh = uniform({1, 1600}, -0.3, 0.3, rng);
                   TokenBatch labels;
                   TensorD q;
                   {
                     NoGradScope ng;
                     const auto states = teacher.encode(clean);
                     labels = teacher.greedy(states.cast<float>());
                     q = teacher.decode(states, labels);
                   }
                   return check(
                       [&] {
                         return l_soft(
                             q, teacher.decode(teacher.encode(enh), labels));
                       },
                       {enh}, 32);
                 }});
  return out;
}

}  // namespace

const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> names{"tensor", "spectral",
                                              "complex_nn", "ddccrn", "losses"};
  return names;
}

std::vector<OpCheck> gradcheck_suite(const std::string& module) {
  std::vector<OpCheck> out;
  auto append = [&](std::vector<OpCheck> more) {
    for (auto& c : more) out.push_back(std::move(c));
  };
  const bool all = module == "all";
  bool known = all;
  if (all || module == "tensor") append(tensor_checks()), known = true;
  if (all || module == "spectral") append(spectral_checks()), known = true;
  if (all || module == "complex_nn") append(complex_checks()), known = true;
  if (all || module == "ddccrn") append(ddccrn_checks()), known = true;
  if (all || module == "losses") append(loss_checks()), known = true;
  if (!known) {
    throw std::invalid_argument("unknown gradcheck module '" + module + "'");
  }
  return out;
}

std::vector<OpCheckOutcome> run_checks(const std::vector<OpCheck>& checks,
                                       double tolerance) {
  std::vector<OpCheckOutcome> out;
  for (const auto& c : checks) {
    OpCheckOutcome o{c.module, c.op, {}, 0.0, false, {}};
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o.result = c.run();
      o.passed = o.result.max_rel_error < tolerance;
    } catch (const std::exception& e) {
      o.error = e.what();
      o.result.max_rel_error = std::numeric_limits<double>::infinity();
    }
    o.seconds = std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace duovoce
