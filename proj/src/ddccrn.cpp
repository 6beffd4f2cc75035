// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "duovoce/ddccrn.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "duovoce/random.hpp"

namespace duovoce {

namespace {

using json = nlohmann::json;

constexpr double kMaskMagEps = 1e-10;

std::string stage_name(const char* kind, std::size_t i) {
  return std::string(kind) + "." + std::to_string(i);
}

Conv2dParams encoder_geom(const DdccrnConfig& cfg, std::size_t s) {
  return {cfg.stride(s), 1, cfg.kernel_h / 2, cfg.kernel_w - 1};
}

Conv2dParams decoder_geom(const DdccrnConfig& cfg, std::size_t s) {
  return {cfg.stride(s), 1, cfg.kernel_h / 2, 0};
}

// Keeps the first `frames` time steps, which makes both conv kinds causal.
template <typename T>
BasicComplexTensor<T> keep_frames(const BasicComplexTensor<T>& x,
                                  std::size_t frames) {
  return {slice(x.re, 3, 0, frames), slice(x.im, 3, 0, frames)};
}

template <typename T>
BasicComplexTensor<T> cat_channels(const BasicComplexTensor<T>& a,
                                   const BasicComplexTensor<T>& b) {
  return {concat<T>({a.re, b.re}, 1), concat<T>({a.im, b.im}, 1)};
}

}  // namespace

std::vector<std::size_t> DdccrnConfig::freq_sizes() const {
  std::vector<std::size_t> sizes{stft.bins()};
  const std::size_t pad = kernel_h / 2;
  for (std::size_t s = 0; s < stages(); ++s) {
    const std::size_t f = sizes.back();
    if (f + 2 * pad < kernel_h) break;
    sizes.push_back((f + 2 * pad - kernel_h) / stride(s) + 1);
  }
  return sizes;
}

bool DdccrnConfig::operator==(const DdccrnConfig& o) const {
  const auto strides = [](const DdccrnConfig& c) {
    return c.stride_freq.empty() ? std::vector<std::size_t>(c.stages(), 2)
                                 : c.stride_freq;
  };
  return encoder_channels == o.encoder_channels && kernel_h == o.kernel_h &&
         kernel_w == o.kernel_w && lstm_hidden == o.lstm_hidden &&
         lstm_layers == o.lstm_layers && mask_variant == o.mask_variant &&
         stft == o.stft && strides(*this) == strides(o);
}

void validate(const DdccrnConfig& cfg) {
  validate(cfg.stft);
  if (cfg.encoder_channels.empty()) {
    throw std::invalid_argument("encoder_channels must not be empty");
  }
  for (std::size_t c : cfg.encoder_channels) {
    if (c == 0) throw std::invalid_argument("encoder channel count must be > 0");
  }
  if (cfg.kernel_h == 0 || cfg.kernel_w == 0) {
    throw std::invalid_argument("kernel dimensions must be positive");
  }
  if (!cfg.stride_freq.empty() && cfg.stride_freq.size() != cfg.stages()) {
    throw std::invalid_argument("stride_freq needs one entry per stage");
  }
  for (std::size_t s : cfg.stride_freq) {
    if (s == 0) throw std::invalid_argument("stride_freq entries must be > 0");
  }
  if (cfg.lstm_hidden == 0 || cfg.lstm_layers == 0) {
    throw std::invalid_argument("lstm_hidden and lstm_layers must be > 0");
  }
  if (cfg.mask_variant != "E") {
    throw std::invalid_argument("unsupported mask_variant '" +
                                cfg.mask_variant + "'");
  }
  const auto sizes = cfg.freq_sizes();
  if (sizes.size() != cfg.stages() + 1) {
    throw std::invalid_argument("frequency axis collapses before the last stage");
  }
  const std::size_t pad = cfg.kernel_h / 2;
  for (std::size_t s = 0; s < cfg.stages(); ++s) {
    const long restored = static_cast<long>((sizes[s + 1] - 1) * cfg.stride(s)) -
                          2 * static_cast<long>(pad) +
                          static_cast<long>(cfg.kernel_h);
    if (restored != static_cast<long>(sizes[s])) {
      throw std::invalid_argument(
          "decoder stage " + std::to_string(s) + " yields " +
          std::to_string(restored) + " bins instead of " +
          std::to_string(sizes[s]));
    }
  }
}

std::string config_to_json(const DdccrnConfig& cfg) {
  std::vector<std::size_t> strides;
  for (std::size_t s = 0; s < cfg.stages(); ++s) strides.push_back(cfg.stride(s));
  json j = {
      {"encoder_channels", cfg.encoder_channels},
      {"kernel", {cfg.kernel_h, cfg.kernel_w}},
      {"stride_freq", strides},
      {"lstm_hidden", cfg.lstm_hidden},
      {"lstm_layers", cfg.lstm_layers},
      {"mask_variant", cfg.mask_variant},
      {"stft",
       {{"fft_size", cfg.stft.fft_size},
        {"win_length", cfg.stft.win_length},
        {"hop_length", cfg.stft.hop_length},
        {"window", window_name(cfg.stft.window)}}},
  };
  return j.dump(2);
}

DdccrnConfig config_from_json(const std::string& text) {
  DdccrnConfig cfg;
  try {
    const json j = json::parse(text);
    cfg.encoder_channels =
        j.value("encoder_channels", cfg.encoder_channels);
    if (j.contains("kernel")) {
      const auto k = j.at("kernel").get<std::vector<std::size_t>>();
      if (k.size() != 2) throw std::invalid_argument("kernel must be [kH, kW]");
      cfg.kernel_h = k[0];
      cfg.kernel_w = k[1];
    }
    cfg.stride_freq = j.value("stride_freq", cfg.stride_freq);
    cfg.lstm_hidden = j.value("lstm_hidden", cfg.lstm_hidden);
    cfg.lstm_layers = j.value("lstm_layers", cfg.lstm_layers);
    cfg.mask_variant = j.value("mask_variant", cfg.mask_variant);
    if (j.contains("stft")) {
      const auto& s = j.at("stft");
      cfg.stft.fft_size = s.value("fft_size", cfg.stft.fft_size);
      cfg.stft.win_length = s.value("win_length", cfg.stft.win_length);
      cfg.stft.hop_length = s.value("hop_length", cfg.stft.hop_length);
      if (s.contains("window")) {
        cfg.stft.window = parse_window(s.at("window").get<std::string>());
      }
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("model config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

DdccrnModel build(const DdccrnConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  DdccrnModel model{cfg, {}};
  Rng rng(derive_seed(seed, "init"));
  const auto& ch = cfg.encoder_channels;
  const std::size_t kh = cfg.kernel_h, kw = cfg.kernel_w;

  std::size_t in = 2;
  for (std::size_t s = 0; s < cfg.stages(); ++s) {
    init_complex_conv(model.params, stage_name("enc", s), in, ch[s], kh, kw,
                      false, rng);
    in = ch[s];
  }
  const std::size_t bottleneck = ch.back() * cfg.freq_sizes().back();
  std::size_t lstm_in = bottleneck;
  for (std::size_t l = 0; l < cfg.lstm_layers; ++l) {
    init_complex_lstm(model.params, stage_name("lstm", l), lstm_in,
                      cfg.lstm_hidden, rng);
    lstm_in = cfg.lstm_hidden;
  }
  init_complex_dense(model.params, "dense", cfg.lstm_hidden, bottleneck, rng);
  for (std::size_t s = cfg.stages(); s-- > 0;) {
    const std::size_t out = s > 0 ? ch[s - 1] : 1;
    init_complex_conv(model.params, stage_name("dec", s), 2 * ch[s], out, kh,
                      kw, true, rng);
  }
  return model;
}

std::size_t count_params(const DdccrnModel& model) {
  return count_params(model.params);
}

template <typename T>
BasicComplexTensor<T> mask_apply(const BasicComplexTensor<T>& spec,
                                 const BasicComplexTensor<T>& mask) {
  if (spec.re.shape() != mask.re.shape() || spec.im.shape() != mask.im.shape() ||
      spec.re.shape() != spec.im.shape()) {
    throw ShapeError("mask_apply: spectrum " + shape_str(spec.re.shape()) +
                     " vs mask " + shape_str(mask.re.shape()));
  }
  const auto mag =
      sqrt(add_scalar(add(square(mask.re), square(mask.im)), kMaskMagEps));
  const auto gain = div(tanh(mag), mag);
  const auto re = sub(mul(spec.re, mask.re), mul(spec.im, mask.im));
  const auto im = add(mul(spec.re, mask.im), mul(spec.im, mask.re));
  return {mul(re, gain), mul(im, gain)};
}

ComplexSpectrogram mask_apply(const ComplexSpectrogram& spec,
                              const ComplexSpectrogram& mask) {
  if (spec.frames() != mask.frames() || spec.bins() != mask.bins()) {
    throw ShapeError("mask_apply: spectrogram shapes differ");
  }
  const Shape shape{spec.frames(), spec.bins()};
  const BasicComplexTensor<double> s{
      Tensor(shape, spec.real.data).cast<double>(),
      Tensor(shape, spec.imag.data).cast<double>()};
  const BasicComplexTensor<double> m{
      Tensor(shape, mask.real.data).cast<double>(),
      Tensor(shape, mask.imag.data).cast<double>()};
  const auto out = mask_apply(s, m);
  ComplexSpectrogram result = spec;
  for (std::size_t i = 0; i < out.re.numel(); ++i) {
    result.real.data[i] = static_cast<float>(out.re.data()[i]);
    result.imag.data[i] = static_cast<float>(out.im.data()[i]);
  }
  return result;
}

template <typename T>
BasicComplexTensor<T> estimate_mask(const DdccrnConfig& cfg,
                                    const ParamMap<T>& params,
                                    const BasicComplexTensor<T>& input) {
  if (input.re.rank() != 4 || input.re.dim(1) != 2 ||
      input.re.dim(2) != cfg.stft.bins()) {
    throw ShapeError("estimate_mask: expected (B, 2, " +
                     std::to_string(cfg.stft.bins()) + ", T), got " +
                     shape_str(input.re.shape()));
  }
  const std::size_t frames = input.re.dim(3);
  const std::size_t batch = input.re.dim(0);

  BasicComplexTensor<T> x = input;
  std::vector<BasicComplexTensor<T>> skips;
  for (std::size_t s = 0; s < cfg.stages(); ++s) {
    const auto layer =
        bind_complex_conv(params, stage_name("enc", s), encoder_geom(cfg, s));
    x = keep_frames(complex_conv2d(x, layer), frames);
    x = complex_leaky_relu(complex_norm(x), kLeakySlope);
    skips.push_back(x);
  }

  const std::size_t c = x.re.dim(1), f = x.re.dim(2);
  auto to_seq = [&](const BasicTensor<T>& t) {
    return reshape(permute(t, {3, 0, 1, 2}), {frames, batch, c * f});
  };
  BasicComplexTensor<T> seq{to_seq(x.re), to_seq(x.im)};
  for (std::size_t l = 0; l < cfg.lstm_layers; ++l) {
    seq = complex_lstm(seq, bind_complex_lstm(params, stage_name("lstm", l)));
  }
  const std::size_t h = cfg.lstm_hidden;
  auto flat = [&](const BasicTensor<T>& t) {
    return reshape(t, {frames * batch, h});
  };
  const auto dense = complex_dense(BasicComplexTensor<T>{flat(seq.re), flat(seq.im)},
                                   bind_complex_dense(params, "dense"));
  auto to_map = [&](const BasicTensor<T>& t) {
    return permute(reshape(t, {frames, batch, c, f}), {1, 2, 3, 0});
  };
  x = {to_map(dense.re), to_map(dense.im)};

  for (std::size_t s = cfg.stages(); s-- > 0;) {
    const auto layer =
        bind_complex_conv(params, stage_name("dec", s), decoder_geom(cfg, s));
    x = keep_frames(complex_conv2d_transpose(cat_channels(x, skips[s]), layer),
                    frames);
    if (s > 0) x = complex_leaky_relu(complex_norm(x), kLeakySlope);
  }
  return x;
}

template <typename T>
BasicTensor<T> forward_batch(const DdccrnConfig& cfg, const ParamMap<T>& params,
                             const BasicTensor<T>& mic,
                             const BasicTensor<T>& vib,
                             const ForwardOptions& opts) {
  if (mic.rank() != 2 || mic.shape() != vib.shape()) {
    throw ShapeError("forward: mic " + shape_str(mic.shape()) + " and vib " +
                     shape_str(vib.shape()) + " must both be (batch, length)");
  }
  const std::size_t length = mic.dim(1);
  const auto m = stft(mic, cfg.stft);
  switch (opts.mask) {
    case MaskOverride::kUnity:
      return istft(m.re, m.im, cfg.stft, length);
    case MaskOverride::kZero: {
      const BasicTensor<T> zero(m.re.shape());
      return istft(zero, zero, cfg.stft, length);
    }
    case MaskOverride::kNone:
      break;
  }
  const auto v = stft(vib, cfg.stft);
  const BasicComplexTensor<T> input{concat<T>({m.re, v.re}, 1),
                                    concat<T>({m.im, v.im}, 1)};
  const auto mask = estimate_mask(cfg, params, input);
  const auto out = mask_apply(BasicComplexTensor<T>{m.re, m.im}, mask);
  return istft(out.re, out.im, cfg.stft, length);
}

Waveform forward(const DdccrnModel& model, const DualCapture& capture,
                 const ForwardOptions& opts) {
  validate(capture);
  require_canonical_rate(capture.mic);
  const std::size_t length = capture.mic.size();
  if (length < model.config.stft.win_length) {
    throw std::invalid_argument("forward: capture of " + std::to_string(length) +
                                " samples is shorter than one frame");
  }
  NoGradScope no_grad;
  const Tensor mic(Shape{1, length}, capture.mic.samples);
  const Tensor vib(Shape{1, length}, capture.vib.samples);
  const auto out = forward_batch(model.config, model.params, mic, vib, opts);
  Waveform w;
  w.samples.assign(out.data().begin(), out.data().end());
  return w;
}

void save_model(const DdccrnModel& model, const std::filesystem::path& path) {
  save_checkpoint(path, model.params);
  std::ofstream os(path.string() + ".json", std::ios::binary);
  os << config_to_json(model.config) << '\n';
  if (!os) {
    throw CheckpointError("cannot write model config " + path.string() +
                          ".json");
  }
}

DdccrnModel load_model(const std::filesystem::path& path) {
  const std::string sidecar = path.string() + ".json";
  std::ifstream is(sidecar, std::ios::binary);
  if (!is) throw CheckpointError("cannot open model config " + sidecar);
  std::stringstream text;
  text << is.rdbuf();
  DdccrnModel model;
  try {
    model.config = config_from_json(text.str());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(sidecar + ": " + e.what());
  }
  model.params = load_checkpoint(path);
  // A fresh build gives the expected names and shapes.
  const auto expected = build(model.config, 0);
  if (expected.params.size() != model.params.size()) {
    throw CheckpointError(path.string() + ": parameter count does not match config");
  }
  for (const auto& [name, t] : expected.params) {
    auto it = model.params.find(name);
    if (it == model.params.end() || it->second.shape() != t.shape()) {
      throw CheckpointError(path.string() + ": tensor '" + name +
                            "' missing or misshapen");
    }
    it->second.set_requires_grad(true);
  }
  return model;
}

EnhanceResult enhance_file(const DdccrnModel& model,
                           const std::filesystem::path& in_path,
                           const std::filesystem::path& out_path) {
  const auto start = std::chrono::steady_clock::now();
  const DualCapture capture = read_capture(in_path);
  const Waveform out = forward(model, capture);
  write_wav(out_path, out);
  const std::chrono::duration<double> elapsed =
      std::chrono::steady_clock::now() - start;
  return {elapsed.count(), out.size()};
}

#define DUOVOCE_INSTANTIATE(T)                                               \
  template BasicComplexTensor<T> mask_apply(const BasicComplexTensor<T>&,    \
                                            const BasicComplexTensor<T>&);   \
  template BasicComplexTensor<T> estimate_mask(                              \
      const DdccrnConfig&, const ParamMap<T>&, const BasicComplexTensor<T>&); \
  template BasicTensor<T> forward_batch(                                     \
      const DdccrnConfig&, const ParamMap<T>&, const BasicTensor<T>&,        \
      const BasicTensor<T>&, const ForwardOptions&);

DUOVOCE_INSTANTIATE(float)
DUOVOCE_INSTANTIATE(double)

#undef DUOVOCE_INSTANTIATE

}  // namespace duovoce
