// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "duovoce/dataset.hpp"
#include "duovoce/ddccrn.hpp"
#include "duovoce/metrics.hpp"
#include "duovoce/spectral.hpp"
#include "duovoce/train.hpp"
#include "duovoce/verify.hpp"

namespace duovoce::cli {

namespace {

using json = nlohmann::json;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::uint64_t env_seed() {
  const char* s = std::getenv("DUOVOCE_SEED");
  if (s == nullptr || *s == '\0') return 0;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError(std::string("DUOVOCE_SEED is not an unsigned integer: ") +
                     s);
  }
}

std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw WavError(WavErrorKind::kIo, "cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<double> parse_levels(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || !std::isfinite(v)) {
      throw UsageError("bad level '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--levels needs at least one value");
  return out;
}

// ------------------------------------------------------------- commands

struct GenCorpusArgs {
  long long n = -1;
  std::uint64_t seed = 0;
  std::string out;
};

int gen_corpus_cmd(const GenCorpusArgs& a, std::ostream& out) {
  if (a.n <= 0) throw UsageError("--n must be a positive integer");
  const StubTeacher teacher;
  const auto m = gen_toy_corpus(static_cast<std::size_t>(a.n), a.seed, a.out,
                                teacher);
  out << (m.root / kManifestName).string() << '\n';
  return kOk;
}

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
};

int train_cmd(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig cfg;
  try {
    json j = json::parse(read_text(a.config));
    if (a.seed) {
      j["seed"] = *a.seed;
    } else if (!j.contains("seed")) {
      j["seed"] = env_seed();
    }
    cfg = train_config_from_json(j.dump());
  } catch (const json::exception& e) {
    throw UsageError(std::string("train config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  // The loss curve always lands next to the checkpoint.
  if (cfg.log_path.empty() && !cfg.checkpoint_out.empty()) {
    cfg.log_path = cfg.checkpoint_out + ".log.jsonl";
  }
  const auto result = train(cfg);
  const auto& log = result.log;
  err << "trained " << log.size() << " steps, l_total " << log.front().total
      << " -> " << log.back().total << '\n';
  out << json{{"steps", log.size()},
              {"initial_l_total", log.front().total},
              {"final_l_total", log.back().total},
              {"checkpoint", cfg.checkpoint_out},
              {"log", cfg.log_path}}
             .dump()
      << '\n';
  return kOk;
}

struct EnhanceArgs {
  std::string model, in, out;
};

int enhance_cmd(const EnhanceArgs& a, std::ostream& out) {
  const auto model = load_model(a.model);
  const auto r = enhance_file(model, a.in, a.out);
  const double audio = static_cast<double>(r.samples) / kCanonicalRate;
  out << json{{"seconds", r.seconds},
              {"samples", r.samples},
              {"audio_seconds", audio},
              {"real_time_factor", audio > 0 ? r.seconds / audio : 0.0}}
             .dump()
      << '\n';
  return kOk;
}

struct EvalArgs {
  std::string model, manifest, levels = "-20,-10,0,10", out;
  std::string channels;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
};

int eval_cmd(const EvalArgs& a, std::ostream& out) {
  EvalOptions opts;
  opts.levels = parse_levels(a.levels);
  opts.seed = a.seed ? *a.seed : env_seed();
  if (a.jobs == 0) throw UsageError("--jobs must be >= 1");
  opts.jobs = a.jobs;
  if (!a.channels.empty()) {
    opts.channels.clear();
    std::stringstream ss(a.channels);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        opts.channels.push_back(parse_channel(item));
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
    }
  } else if (a.model.empty()) {
    opts.channels = {Channel::kMic, Channel::kVib};
  }
  const bool want_enhanced =
      std::find(opts.channels.begin(), opts.channels.end(),
                Channel::kEnhanced) != opts.channels.end();
  if (want_enhanced && a.model.empty()) {
    throw UsageError("the enhanced channel needs --model");
  }
  std::optional<DdccrnModel> model;
  if (!a.model.empty()) model = load_model(a.model);
  const auto manifest = read_manifest(a.manifest);
  const StubTeacher teacher;
  const auto report =
      evaluate(manifest, model ? &*model : nullptr, teacher, opts);
  write_report(report, a.out);
  out << a.out << ".json\n" << a.out << ".csv\n";
  return kOk;
}

struct GradcheckArgs {
  std::string module = "all";
};

int gradcheck_cmd(const GradcheckArgs& a, std::ostream& out,
                  std::ostream& err) {
  std::vector<OpCheck> suite;
  try {
    suite = gradcheck_suite(a.module);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return report_gradcheck(suite, out, err);
}

}  // namespace

int report_gradcheck(const std::vector<OpCheck>& checks, std::ostream& out,
                     std::ostream& err) {
  const auto outcomes = run_checks(checks);
  int failures = 0;
  double worst = 0.0;
  for (const auto& o : outcomes) {
    out << std::left << std::setw(11) << o.module << std::setw(26) << o.op
        << std::scientific << std::setprecision(3) << o.result.max_rel_error
        << std::defaultfloat << (o.passed ? "  ok" : "  FAIL") << '\n';
    worst = std::max(worst, o.result.max_rel_error);
    if (!o.passed) {
      ++failures;
      err << "gradcheck failed: " << o.module << "." << o.op
          << " max relative error " << o.result.max_rel_error;
      if (!o.error.empty()) err << " (" << o.error << ")";
      err << '\n';
    }
  }
  out << outcomes.size() << " checks, max relative error " << worst << '\n';
  return failures == 0 ? kOk : kVerificationFailed;
}

namespace {

struct SpectrogramArgs {
  std::string in, channel = "mono", out;
};

int spectrogram_cmd(const SpectrogramArgs& a, std::ostream& out) {
  Waveform w;
  if (a.channel == "mono") {
    w = read_waveform(a.in);
  } else if (a.channel == "mic" || a.channel == "vib") {
    const auto cap = read_capture(a.in);
    w = a.channel == "mic" ? cap.mic : cap.vib;
  } else {
    throw UsageError("--channel must be mic, vib or mono");
  }
  require_canonical_rate(w);
  const Matrix m = mel_spectrogram(w, StftConfig{}, MelConfig{});

  std::ofstream csv(a.out + ".csv", std::ios::binary);
  csv << std::setprecision(7);
  for (std::size_t t = 0; t < m.rows; ++t) {
    for (std::size_t k = 0; k < m.cols; ++k) {
      csv << (k ? "," : "") << m(t, k);
    }
    csv << '\n';
  }
  if (!csv) throw WavError(WavErrorKind::kIo, "cannot write " + a.out + ".csv");

  // Time runs left to right and the lowest band sits on the bottom row.
  const auto [lo, hi] = std::minmax_element(m.data.begin(), m.data.end());
  const double range = m.data.empty() ? 0.0 : double(*hi) - double(*lo);
  std::ofstream pgm(a.out + ".pgm", std::ios::binary);
  pgm << "P5\n" << m.rows << ' ' << m.cols << "\n255\n";
  for (std::size_t k = m.cols; k-- > 0;) {
    for (std::size_t t = 0; t < m.rows; ++t) {
      const double v = range > 0.0 ? (m(t, k) - *lo) / range : 0.0;
      pgm.put(static_cast<char>(std::lround(255.0 * v)));
    }
  }
  if (!pgm) throw WavError(WavErrorKind::kIo, "cannot write " + a.out + ".pgm");
  out << a.out << ".csv\n" << a.out << ".pgm\n";
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Dual-input speech enhancement toolkit", "duovoce"};
  app.require_subcommand(1);

  GenCorpusArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Generate a toy corpus");
  gen_cmd->add_option("--n", gen.n, "Number of utterances")->required();
  auto* gen_seed = gen_cmd->add_option("--seed", gen.seed, "Corpus seed");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_sub = app.add_subcommand("train", "Train a model");
  train_sub->add_option("--config", tr.config, "TrainConfig JSON")->required();
  train_sub->add_option("--seed", tr.seed, "Overrides the config seed");

  EnhanceArgs en;
  auto* enh_sub = app.add_subcommand("enhance", "Enhance a stereo capture");
  enh_sub->add_option("--model", en.model, "Checkpoint")->required();
  enh_sub->add_option("--in", en.in, "Stereo WAV (left vib, right mic)")
      ->required();
  enh_sub->add_option("--out", en.out, "Output WAV")->required();

  EvalArgs ev;
  auto* eval_sub = app.add_subcommand("eval", "Evaluate over noise levels");
  eval_sub->add_option("--model", ev.model, "Checkpoint");
  eval_sub->add_option("--manifest", ev.manifest, "Corpus manifest")
      ->required();
  eval_sub->add_option("--levels", ev.levels, "Comma-separated levels in dB")
      ->allow_extra_args(false);
  eval_sub->add_option("--channels", ev.channels,
                       "Comma-separated subset of clean,mic,vib,enhanced");
  eval_sub->add_option("--out", ev.out, "Report base path")->required();
  eval_sub->add_option("--seed", ev.seed, "Mixing seed");
  eval_sub->add_option("--jobs", ev.jobs, "Worker threads");

  GradcheckArgs gc;
  auto* gc_sub = app.add_subcommand("gradcheck", "Run the gradient oracle");
  gc_sub->add_option("--module", gc.module,
                     "all, tensor, spectral, complex_nn, ddccrn or losses");

  SpectrogramArgs sp;
  auto* sp_sub = app.add_subcommand("spectrogram", "Write a log-mel image");
  sp_sub->add_option("--in", sp.in, "Input WAV")->required();
  sp_sub->add_option("--channel", sp.channel, "mic, vib or mono");
  sp_sub->add_option("--out", sp.out, "Output base path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsageError;
  }

  try {
    if (*gen_cmd) {
      if (gen_seed->count() == 0) gen.seed = env_seed();
      return gen_corpus_cmd(gen, out);
    }
    if (*train_sub) return train_cmd(tr, out, err);
    if (*enh_sub) return enhance_cmd(en, out);
    if (*eval_sub) return eval_cmd(ev, out);
    if (*gc_sub) return gradcheck_cmd(gc, out, err);
    if (*sp_sub) return spectrogram_cmd(sp, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return kUsageError;
  } catch (const NumericalError& e) {
    err << "numerical divergence: " << e.what() << '\n';
    return kNumericalError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}

}  // namespace duovoce::cli
