// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "duovoce/dataset.hpp"
#include "duovoce/ddccrn.hpp"
#include "duovoce/spectral.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace duovoce;
using duovoce::testing::TempDir;
using nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string out, err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "duovoce");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

const TempDir& corpus_dir() {
  static TempDir dir("cli_corpus");
  static const bool made = [] {
    REQUIRE(run_cli({"gen-corpus", "--n", "10", "--seed", "1", "--out",
                     dir.path().string()})
                .code == 0);
    return true;
  }();
  (void)made;
  return dir;
}

json small_train_config(const std::filesystem::path& ckpt, std::size_t steps) {
  DdccrnConfig model;
  model.encoder_channels = {4, 8};
  model.lstm_hidden = 8;
  return {{"model", json::parse(config_to_json(model))},
          {"steps", steps},
          {"batch_size", 2},
          {"lr", 3e-3},
          {"seed", 5},
          {"manifest_path", (corpus_dir() / kManifestName).string()},
          {"checkpoint_out", ckpt.string()}};
}

std::vector<json> read_jsonl(const std::filesystem::path& p) {
  std::vector<json> rows;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) rows.push_back(json::parse(line));
  return rows;
}

}  // namespace

TEST_CASE("gen-corpus writes a balanced manifest and reruns identically") {
  TempDir a("gen_a"), b("gen_b");
  const auto r = run_cli({"gen-corpus", "--n", "10", "--seed", "1", "--out", a.path().string()});
  REQUIRE(r.code == cli::kOk);
  CHECK(r.out.find(kManifestName) != std::string::npos);
  const auto m = read_manifest(a.path());
  REQUIRE(m.entries.size() == 10);
  CHECK(std::count_if(m.entries.begin(), m.entries.end(), [](const auto& e) {
          return e.mode == SpeechMode::kWhisper;
        }) == 5);
  REQUIRE(run_cli({"gen-corpus", "--n", "10", "--seed", "1", "--out", b.path().string()}).code == 0);
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    CHECK_MESSAGE(slurp(entry.path()) == slurp(b.path() / rel), rel.string());
  }
}

TEST_CASE("usage errors exit 2") {
  TempDir dir("usage");
  auto r = run_cli({"gen-corpus", "--n", "0", "--out", dir.path().string()});
  CHECK(r.code == cli::kUsageError);
  CHECK(r.err.find("--n") != std::string::npos);
  CHECK(run_cli({}).code == cli::kUsageError);
  CHECK(run_cli({"frobnicate"}).code == cli::kUsageError);
  CHECK(run_cli({"gen-corpus", "--n", "ten", "--out", "x"}).code == cli::kUsageError);
  CHECK(run_cli({"eval", "--manifest", (corpus_dir() / kManifestName).string(),
                 "--levels", "", "--channels", "mic", "--out", (dir / "r").string()})
            .code == cli::kUsageError);
  CHECK(run_cli({"gradcheck", "--module", "nonsense"}).code == cli::kUsageError);

  write_text(dir / "zero.json", small_train_config(dir / "m.ckpt", 0).dump());
  CHECK(run_cli({"train", "--config", (dir / "zero.json").string()}).code ==
        cli::kUsageError);
  write_text(dir / "broken.json", "{\"steps\": ");
  CHECK(run_cli({"train", "--config", (dir / "broken.json").string()}).code ==
        cli::kUsageError);
  auto typo = small_train_config(dir / "m.ckpt", 5);
  typo["stpes"] = 5;
  write_text(dir / "typo.json", typo.dump());
  CHECK(run_cli({"train", "--config", (dir / "typo.json").string()}).code ==
        cli::kUsageError);
}

TEST_CASE("train reduces the loss and is byte-deterministic") {
  TempDir dir("train");
  write_text(dir / "a.json", small_train_config(dir / "a.ckpt", 50).dump());
  write_text(dir / "b.json", small_train_config(dir / "b.ckpt", 50).dump());
  const auto r = run_cli({"train", "--config", (dir / "a.json").string()});
  REQUIRE_MESSAGE(r.code == cli::kOk, r.err);
  REQUIRE(run_cli({"train", "--config", (dir / "b.json").string()}).code == cli::kOk);
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
  CHECK(slurp(dir / "a.ckpt.json") == slurp(dir / "b.ckpt.json"));

  const auto log = read_jsonl(dir / "a.ckpt.log.jsonl");
  REQUIRE(log.size() == 50);
  // Per-step losses are noisy (fresh crops and levels), so compare the ends.
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += log[i]["l_total"].get<double>();
    last += log[49 - i]["l_total"].get<double>();
  }
  CHECK(last < first);

  // A different seed trains a different model.
  auto other = small_train_config(dir / "c.ckpt", 50);
  other["steps"] = 3;
  write_text(dir / "c.json", other.dump());
  REQUIRE(run_cli({"train", "--config", (dir / "c.json").string(), "--seed", "6"}).code == 0);
  write_text(dir / "d.json", small_train_config(dir / "d.ckpt", 3).dump());
  REQUIRE(run_cli({"train", "--config", (dir / "d.json").string()}).code == 0);
  CHECK(slurp(dir / "c.ckpt") != slurp(dir / "d.ckpt"));
}

TEST_CASE("train aborts with exit 3 when the loss diverges") {
  TempDir dir("diverge");
  auto cfg = small_train_config(dir / "m.ckpt", 30);
  cfg["lr"] = 1e30;
  cfg["optimizer"] = "sgd";
  cfg["clip_norm"] = 1e30;
  write_text(dir / "c.json", cfg.dump());
  const auto r = run_cli({"train", "--config", (dir / "c.json").string()});
  CHECK(r.code == cli::kNumericalError);
  CHECK(r.err.find("numerical") != std::string::npos);
}

TEST_CASE("enhance: output, timing and runtime errors") {
  TempDir dir("enhance_cli");
  const auto model = build(DdccrnConfig{{4, 8}, 5, 2, {}, 8}, 1);
  save_model(model, dir / "m.ckpt");
  const auto m = read_manifest(corpus_dir().path());
  const auto noisy = m.resolve(m.entries[0].noisy_path);

  const auto r = run_cli({"enhance", "--model", (dir / "m.ckpt").string(), "--in",
                          noisy.string(), "--out", (dir / "e.wav").string()});
  REQUIRE_MESSAGE(r.code == cli::kOk, r.err);
  const auto timing = json::parse(r.out);
  CHECK(timing["seconds"].get<double>() > 0.0);
  CHECK(read_waveform(dir / "e.wav").size() == read_capture(noisy).mic.size());

  const auto mono = m.resolve(m.entries[0].clean_path);
  auto e = run_cli({"enhance", "--model", (dir / "m.ckpt").string(), "--in",
                    mono.string(), "--out", (dir / "x.wav").string()});
  CHECK(e.code == cli::kRuntimeError);
  CHECK(e.err.find("channel") != std::string::npos);

  const auto missing = (dir / "absent.ckpt").string();
  e = run_cli({"enhance", "--model", missing, "--in", noisy.string(), "--out",
               (dir / "x.wav").string()});
  CHECK(e.code == cli::kRuntimeError);
  CHECK(e.err.find(missing) != std::string::npos);
}

TEST_CASE("eval writes the report grid and is deterministic") {
  TempDir dir("eval_cli");
  const auto model = build(DdccrnConfig{{4, 8}, 5, 2, {}, 8}, 1);
  save_model(model, dir / "m.ckpt");
  const std::vector<std::string> args{
      "eval", "--model", (dir / "m.ckpt").string(), "--manifest",
      (corpus_dir() / kManifestName).string(), "--levels", "-20,-10,0,10",
      "--seed", "3"};
  auto a = args, b = args;
  a.insert(a.end(), {"--out", (dir / "a").string()});
  b.insert(b.end(), {"--out", (dir / "b").string()});
  REQUIRE(run_cli(a).code == cli::kOk);
  REQUIRE(run_cli(b).code == cli::kOk);
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
  std::istringstream csv(slurp(dir / "a.csv"));
  std::vector<std::string> rows;
  for (std::string line; std::getline(csv, line);) rows.push_back(line);
  REQUIRE(rows.size() == 5);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(std::count(rows[i].begin(), rows[i].end(), ',') == 6);
  }
  CHECK(std::filesystem::exists(dir / "a.enhanced.csv"));
  CHECK(std::filesystem::exists(dir / "a.mic.csv"));
}

TEST_CASE("gradcheck exits 0 and a corrupted backward exits 4") {
  auto r = run_cli({"gradcheck", "--module", "losses"});
  CHECK(r.code == cli::kOk);
  CHECK(r.out.find("si_sdr") != std::string::npos);

  OpCheck bad{"tensor", "halved_square", [] {
                TensorD x(Shape{4}, {0.5, -1.0, 2.0, 3.0});
                return grad_check<double>(
                    [&] {
                      TensorD y(x.shape());
                      for (std::size_t i = 0; i < 4; ++i) y.data()[i] = x.data()[i] * x.data()[i];
                      if (detail::recording<double>({&x})) {
                        auto xi = x.impl();
                        auto yi = y.impl();
                        // True derivative is 2x.
                        detail::attach_backward(y, [xi, yi] {
                          auto& g = xi->grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            g[i] += xi->data[i] * yi->grad[i];
                          }
                        });
                      }
                      return sum(y);
                    },
                    {x});
              }};
  std::ostringstream out, err;
  const auto good = gradcheck_suite("tensor").front();
  CHECK(cli::report_gradcheck({good, bad}, out, err) == cli::kVerificationFailed);
  CHECK(err.str().find("halved_square") != std::string::npos);
  CHECK(err.str().find(good.op) == std::string::npos);
  CHECK(out.str().find("FAIL") != std::string::npos);
}

TEST_CASE("spectrogram CSV and PGM shapes") {
  TempDir dir("spec_cli");
  const std::size_t n = 8000;
  write_wav(dir / "silence.wav", Waveform{std::vector<float>(n, 0.0f)});
  REQUIRE(run_cli({"spectrogram", "--in", (dir / "silence.wav").string(), "--out",
                   (dir / "s").string()})
              .code == cli::kOk);
  const std::size_t frames = stft_frame_count(n, StftConfig{});
  std::istringstream csv(slurp(dir / "s.csv"));
  std::size_t rows = 0;
  const std::string floor_text = [] {
    std::ostringstream os;
    os << std::log(kLogMelEps);
    return os.str();
  }();
  for (std::string line; std::getline(csv, line); ++rows) {
    CHECK(std::count(line.begin(), line.end(), ',') == 79);
    std::istringstream cells(line);
    for (std::string cell; std::getline(cells, cell, ',');) {
      REQUIRE(std::stod(cell) == doctest::Approx(std::log(kLogMelEps)));
    }
  }
  CHECK(rows == frames);
  std::istringstream pgm(slurp(dir / "s.pgm"));
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  pgm >> magic >> w >> h >> maxval;
  CHECK(magic == "P5");
  CHECK(w == frames);
  CHECK(h == 80);

  const auto m = read_manifest(corpus_dir().path());
  const auto noisy = m.resolve(m.entries[1].noisy_path).string();
  CHECK(run_cli({"spectrogram", "--in", noisy, "--channel", "vib", "--out",
                 (dir / "v").string()})
            .code == cli::kOk);
  CHECK(run_cli({"spectrogram", "--in", (dir / "absent.wav").string(), "--out",
                 (dir / "z").string()})
            .code == cli::kRuntimeError);
}

TEST_CASE("DUOVOCE_SEED supplies the default corpus seed") {
  TempDir a("env_a"), b("env_b");
  ::setenv("DUOVOCE_SEED", "1", 1);
  REQUIRE(run_cli({"gen-corpus", "--n", "2", "--out", a.path().string()}).code == 0);
  ::unsetenv("DUOVOCE_SEED");
  REQUIRE(run_cli({"gen-corpus", "--n", "2", "--seed", "1", "--out", b.path().string()}).code == 0);
  CHECK(slurp(a / kManifestName) == slurp(b / kManifestName));
}
