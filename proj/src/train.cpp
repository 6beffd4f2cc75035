// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "duovoce/train.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"

#include "duovoce/random.hpp"

namespace duovoce {

namespace {

using json = nlohmann::json;

constexpr std::size_t kNoiseClips = 8;
constexpr double kNoiseClipSeconds = 5.0;

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t t = 0;
  std::vector<std::vector<double>> m, v;
};

void adam_step(std::vector<Tensor>& params, AdamState& st, double lr) {
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(p.numel(), 0.0);
      st.v.emplace_back(p.numel(), 0.0);
    }
  }
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, double(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, double(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) {
      throw AutodiffError("adam: parameter " + std::to_string(i) +
                          " received no gradient");
    }
    auto data = p.data();
    const auto grad = p.grad();
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double g = grad[k];
      m[k] = st.beta1 * m[k] + (1 - st.beta1) * g;
      v[k] = st.beta2 * v[k] + (1 - st.beta2) * g * g;
      data[k] -= static_cast<float>(lr * (m[k] / c1) /
                                    (std::sqrt(v[k] / c2) + st.eps));
    }
    p.zero_grad();
  }
}

std::string optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::kSgd ? "sgd" : "adam";
}

}  // namespace

void validate(const TrainConfig& cfg) {
  validate(cfg.model);
  validate(cfg.weights);
  if (cfg.steps == 0) throw std::invalid_argument("steps must be >= 1");
  if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) {
    throw std::invalid_argument("lr must be positive");
  }
  if (!(cfg.crop_seconds > 0.0)) {
    throw std::invalid_argument("crop_seconds must be positive");
  }
  if (static_cast<std::size_t>(cfg.crop_seconds * kCanonicalRate) <
      cfg.model.stft.win_length) {
    throw std::invalid_argument("crop_seconds is shorter than one frame");
  }
  if (!(cfg.clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
  if (!(cfg.min_level_db <= cfg.max_level_db)) {
    throw std::invalid_argument("min_level_db must not exceed max_level_db");
  }
}

TrainConfig train_config_from_json(const std::string& text) {
  TrainConfig cfg;
  try {
    const json j = json::parse(text);
    static const std::set<std::string> known{
        "model", "weights", "steps", "batch_size", "lr", "seed",
        "manifest_path", "checkpoint_out", "log_path", "optimizer",
        "crop_seconds", "clip_norm", "min_level_db", "max_level_db"};
    for (const auto& [key, value] : j.items()) {
      if (!known.count(key)) {
        throw std::invalid_argument("unknown train config key '" + key + "'");
      }
    }
    if (j.contains("model")) cfg.model = config_from_json(j.at("model").dump());
    if (j.contains("weights")) {
      const auto& w = j.at("weights");
      cfg.weights.lambda_si = w.value("lambda_si", cfg.weights.lambda_si);
      cfg.weights.lambda_soft = w.value("lambda_soft", cfg.weights.lambda_soft);
      cfg.weights.lambda_hard = w.value("lambda_hard", cfg.weights.lambda_hard);
      cfg.weights.lambda_kd = w.value("lambda_kd", cfg.weights.lambda_kd);
    }
    const auto steps = j.value("steps", static_cast<long long>(cfg.steps));
    const auto batch = j.value("batch_size", static_cast<long long>(cfg.batch_size));
    if (steps < 0 || batch < 0) {
      throw std::invalid_argument("steps and batch_size must be non-negative");
    }
    cfg.steps = static_cast<std::size_t>(steps);
    cfg.batch_size = static_cast<std::size_t>(batch);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.manifest_path = j.value("manifest_path", cfg.manifest_path);
    cfg.checkpoint_out = j.value("checkpoint_out", cfg.checkpoint_out);
    cfg.log_path = j.value("log_path", cfg.log_path);
    const std::string opt = j.value("optimizer", optimizer_name(cfg.optimizer));
    if (opt == "sgd") {
      cfg.optimizer = OptimizerKind::kSgd;
    } else if (opt == "adam") {
      cfg.optimizer = OptimizerKind::kAdam;
    } else {
      throw std::invalid_argument("optimizer must be 'sgd' or 'adam'");
    }
    cfg.crop_seconds = j.value("crop_seconds", cfg.crop_seconds);
    cfg.clip_norm = j.value("clip_norm", cfg.clip_norm);
    cfg.min_level_db = j.value("min_level_db", cfg.min_level_db);
    cfg.max_level_db = j.value("max_level_db", cfg.max_level_db);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j = {{"model", json::parse(config_to_json(cfg.model))},
            {"weights",
             {{"lambda_si", cfg.weights.lambda_si},
              {"lambda_soft", cfg.weights.lambda_soft},
              {"lambda_hard", cfg.weights.lambda_hard},
              {"lambda_kd", cfg.weights.lambda_kd}}},
            {"steps", cfg.steps},
            {"batch_size", cfg.batch_size},
            {"lr", cfg.lr},
            {"seed", cfg.seed},
            {"manifest_path", cfg.manifest_path},
            {"checkpoint_out", cfg.checkpoint_out},
            {"log_path", cfg.log_path},
            {"optimizer", optimizer_name(cfg.optimizer)},
            {"crop_seconds", cfg.crop_seconds},
            {"clip_norm", cfg.clip_norm},
            {"min_level_db", cfg.min_level_db},
            {"max_level_db", cfg.max_level_db}};
  return j.dump(2);
}

TrainingData load_training_data(const CorpusManifest& manifest,
                                std::uint64_t seed) {
  TrainingData data;
  for (const auto& e : manifest.entries) {
    data.clean.push_back(read_waveform(manifest.resolve(e.clean_path)));
    data.vib.push_back(read_waveform(manifest.resolve(e.vib_path)));
  }
  if (data.clean.empty()) throw std::invalid_argument("training corpus is empty");
  const auto clip_len =
      static_cast<std::size_t>(kNoiseClipSeconds * kCanonicalRate);
  for (std::size_t k = 0; k < kNoiseClips; ++k) {
    data.noise.push_back(
        make_noise(k % 2 == 0 ? NoiseKind::kPink : NoiseKind::kBabble, clip_len,
                   derive_seed(seed, "train_noise", k)));
  }
  return data;
}

TrainResult train(const TrainConfig& cfg, const TrainingData& data,
                  const StubTeacher& teacher,
                  const std::function<void(const StepLog&)>& on_step) {
  validate(cfg);
  TrainResult result{build(cfg.model, cfg.seed), {}};
  std::vector<Tensor> params;
  for (auto& [name, t] : result.model.params) params.push_back(t);

  const auto crop = static_cast<std::size_t>(cfg.crop_seconds * kCanonicalRate);
  const std::size_t batch = cfg.batch_size;
  const Tensor fb_t = filterbank_tensor<float>(
      MelConfig{}, cfg.model.stft.fft_size);
  const AeLossConfig ae_cfg{cfg.model.stft, MelConfig{}, cfg.weights.lambda_si};
  Rng rng(derive_seed(cfg.seed, "train"));
  AdamState adam;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<float> clean(batch * crop), mic(batch * crop), vib(batch * crop);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t u = rng.uniform_int(data.clean.size());
      const Waveform& c = data.clean[u];
      // Utterances shorter than the crop are zero-padded at the end.
      const std::size_t span = c.size() > crop ? c.size() - crop : 0;
      const std::size_t start = span > 0 ? rng.uniform_int(span + 1) : 0;
      Waveform piece;
      piece.samples.assign(crop, 0.0f);
      for (std::size_t i = 0; i < crop && start + i < c.size(); ++i) {
        piece.samples[i] = c.samples[start + i];
        vib[b * crop + i] = data.vib[u].samples[start + i];
      }
      const double level = rng.uniform(cfg.min_level_db, cfg.max_level_db);
      const auto& noise = data.noise[rng.uniform_int(data.noise.size())];
      const std::uint64_t mix_seed = rng.next_u64();
      const Waveform noisy =
          rms(piece) > 0.0 ? mix_noise(piece, noise, {level, mix_seed}) : piece;
      std::copy(piece.samples.begin(), piece.samples.end(),
                clean.begin() + b * crop);
      std::copy(noisy.samples.begin(), noisy.samples.end(),
                mic.begin() + b * crop);
    }
    const Tensor clean_t(Shape{batch, crop}, std::move(clean));
    const Tensor mic_t(Shape{batch, crop}, std::move(mic));
    const Tensor vib_t(Shape{batch, crop}, std::move(vib));

    // Teacher targets on the clean crops.
    TokenBatch labels;
    Tensor q;
    {
      NoGradScope no_grad;
      const auto states = teacher.encode(clean_t);
      labels = teacher.greedy(states);
      q = teacher.decode(states, labels);
    }

    Tape tape;
    StepLog log;
    log.step = step;
    {
      TapeScope scope(tape);
      const auto enhanced =
          forward_batch(cfg.model, result.model.params, mic_t, vib_t);
      const auto ae = l_ae(clean_t, enhanced, ae_cfg, fb_t);
      const auto p = teacher.decode(teacher.encode(enhanced), labels);
      const auto soft = l_soft(q, p);
      const auto hard = l_hard(p, labels);
      const auto total = l_total(ae, l_kd(soft, hard, cfg.weights), cfg.weights);
      log.total = total.item();
      log.ae = ae.item();
      log.soft = soft.item();
      log.hard = hard.item();
      if (!std::isfinite(log.total)) {
        throw NumericalError("non-finite loss at step " + std::to_string(step) +
                             " (ae " + std::to_string(log.ae) + ", soft " +
                             std::to_string(log.soft) + ", hard " +
                             std::to_string(log.hard) + ")");
      }
      backward(total);
    }
    log.grad_norm = clip_grad_norm<float>(params, cfg.clip_norm);
    if (!std::isfinite(log.grad_norm)) {
      throw NumericalError("non-finite gradient norm at step " +
                           std::to_string(step));
    }
    if (cfg.optimizer == OptimizerKind::kSgd) {
      sgd_step<float>(params, cfg.lr);
    } else {
      adam_step(params, adam, cfg.lr);
    }
    result.log.push_back(log);
    if (on_step) on_step(log);
  }
  return result;
}

TrainResult train(const TrainConfig& cfg) {
  validate(cfg);
  if (cfg.manifest_path.empty()) {
    throw std::invalid_argument("train config needs manifest_path");
  }
  const auto manifest = read_manifest(cfg.manifest_path);
  const StubTeacher teacher;
  const auto data = load_training_data(manifest, cfg.seed);

  std::ofstream log_os;
  if (!cfg.log_path.empty()) {
    log_os.open(cfg.log_path, std::ios::binary);
    if (!log_os) {
      throw WavError(WavErrorKind::kIo, "cannot write " + cfg.log_path);
    }
  }
  auto result = train(cfg, data, teacher, [&](const StepLog& s) {
    if (!log_os.is_open()) return;
    log_os << json{{"step", s.step},
                   {"l_total", s.total},
                   {"l_ae", s.ae},
                   {"l_soft", s.soft},
                   {"l_hard", s.hard},
                   {"grad_norm", s.grad_norm}}
                  .dump()
           << '\n';
    log_os.flush();
  });
  if (!cfg.checkpoint_out.empty()) save_model(result.model, cfg.checkpoint_out);
  return result;
}

}  // namespace duovoce
