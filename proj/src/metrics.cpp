// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "duovoce/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

#include "duovoce/losses.hpp"

namespace duovoce {

namespace {

using json = nlohmann::json;

template <typename Seq>
std::size_t levenshtein(const Seq& a, const Seq& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw WavError(WavErrorKind::kIo, "cannot write " + path.string());
}

struct Job {
  std::size_t entry;
  double level_db;
};

}  // namespace

std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  return levenshtein(a, b);
}

double wer(const std::vector<int>& ref, const std::vector<int>& hyp) {
  if (ref.empty()) throw std::invalid_argument("wer: empty reference");
  return static_cast<double>(levenshtein(ref, hyp)) / ref.size();
}

double cer(const std::string& ref, const std::string& hyp) {
  if (ref.empty()) throw std::invalid_argument("cer: empty reference");
  return static_cast<double>(levenshtein(ref, hyp)) / ref.size();
}

double token_cer(const std::vector<int>& ref, const std::vector<int>& hyp) {
  return wer(spell(ref), spell(hyp));
}

std::string channel_name(Channel c) {
  switch (c) {
    case Channel::kClean: return "clean";
    case Channel::kMic: return "mic";
    case Channel::kVib: return "vib";
    case Channel::kEnhanced: return "enhanced";
  }
  return "?";
}

Channel parse_channel(const std::string& name) {
  for (Channel c : {Channel::kClean, Channel::kMic, Channel::kVib,
                    Channel::kEnhanced}) {
    if (channel_name(c) == name) return c;
  }
  throw std::invalid_argument("unknown channel '" + name + "'");
}

std::map<CellKey, MetricsCell> aggregate(
    const std::vector<MetricsRecord>& records) {
  std::map<CellKey, MetricsCell> cells;
  for (const auto& r : records) {
    auto& c = cells[{r.channel, r.mode, r.level_db}];
    ++c.count;
    c.si_sdr_db += r.si_sdr_db;
    c.stoi += r.stoi;
    c.wer += r.wer;
    c.cer += r.cer;
  }
  for (auto& [key, c] : cells) {
    const double n = static_cast<double>(c.count);
    c.si_sdr_db /= n;
    c.stoi /= n;
    c.wer /= n;
    c.cer /= n;
  }
  return cells;
}

MetricsReport evaluate(const CorpusManifest& manifest, const DdccrnModel* model,
                       const StubTeacher& teacher, const EvalOptions& opts) {
  if (opts.levels.empty()) throw std::invalid_argument("evaluate: no levels");
  const bool want_enhanced =
      std::find(opts.channels.begin(), opts.channels.end(),
                Channel::kEnhanced) != opts.channels.end();
  if (want_enhanced && model == nullptr) {
    throw std::invalid_argument("evaluate: enhanced channel needs a model");
  }
  const std::set<std::string> only(opts.ids.begin(), opts.ids.end());

  std::vector<Job> jobs;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (!only.empty() && !only.count(e.id)) continue;
    if (std::find(opts.modes.begin(), opts.modes.end(), e.mode) ==
        opts.modes.end()) {
      continue;
    }
    for (double level : opts.levels) jobs.push_back({i, level});
  }

  // Each job owns a fixed slot, so results never depend on scheduling.
  std::vector<std::vector<MetricsRecord>> slots(jobs.size());
  auto run = [&](std::size_t j) {
    const auto& e = manifest.entries[jobs[j].entry];
    const auto batch =
        build_training_batch(manifest, {e.id}, {jobs[j].level_db, opts.seed});
    const Waveform& clean = batch.clean[0];
    const DualCapture& cap = batch.noisy[0];
    for (Channel ch : opts.channels) {
      Waveform processed;
      switch (ch) {
        case Channel::kClean: processed = clean; break;
        case Channel::kMic: processed = cap.mic; break;
        case Channel::kVib: processed = cap.vib; break;
        case Channel::kEnhanced:
          processed = forward(*model, cap, opts.forward);
          break;
      }
      const auto hyp = teacher.transcribe(processed).tokens;
      MetricsRecord r;
      r.id = e.id;
      r.channel = ch;
      r.mode = e.mode;
      r.level_db = jobs[j].level_db;
      r.si_sdr_db = si_sdr(clean, processed);
      r.stoi = stoi(clean, processed);
      r.wer = wer(e.transcript_tokens, hyp);
      r.cer = token_cer(e.transcript_tokens, hyp);
      slots[j].push_back(r);
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, opts.jobs);
  if (workers == 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run(j);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t j = w; j < jobs.size(); j += workers) run(j);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }

  MetricsReport report;
  for (auto& s : slots) {
    for (auto& r : s) report.records.push_back(std::move(r));
  }
  report.aggregates = aggregate(report.records);
  return report;
}

std::string report_json(const MetricsReport& report) {
  json records = json::array();
  for (const auto& r : report.records) {
    records.push_back({{"id", r.id},
                       {"channel", channel_name(r.channel)},
                       {"mode", mode_name(r.mode)},
                       {"level_db", r.level_db},
                       {"si_sdr_db", r.si_sdr_db},
                       {"stoi", r.stoi},
                       {"wer", r.wer},
                       {"cer", r.cer}});
  }
  json cells = json::array();
  for (const auto& [key, c] : report.aggregates) {
    cells.push_back({{"channel", channel_name(std::get<0>(key))},
                     {"mode", mode_name(std::get<1>(key))},
                     {"level_db", std::get<2>(key)},
                     {"count", c.count},
                     {"si_sdr_db", c.si_sdr_db},
                     {"stoi", c.stoi},
                     {"wer", c.wer},
                     {"cer", c.cer}});
  }
  json out = {{"records", records}, {"aggregates", cells}};
  out["pesq"] = report.pesq ? json(*report.pesq) : json(nullptr);
  return out.dump(2);
}

std::string report_csv(const MetricsReport& report, Channel channel) {
  std::set<double> levels;
  std::set<SpeechMode> modes;
  for (const auto& [key, c] : report.aggregates) {
    if (std::get<0>(key) != channel) continue;
    modes.insert(std::get<1>(key));
    levels.insert(std::get<2>(key));
  }
  std::ostringstream os;
  os << "level_db";
  for (const char* metric : {"wer", "cer", "stoi"}) {
    for (SpeechMode m : modes) os << ',' << metric << '_' << mode_name(m);
  }
  os << '\n' << std::setprecision(6);
  for (double level : levels) {
    os << level;
    for (int metric = 0; metric < 3; ++metric) {
      for (SpeechMode m : modes) {
        const auto it = report.aggregates.find({channel, m, level});
        os << ',';
        if (it == report.aggregates.end()) continue;
        const auto& c = it->second;
        os << (metric == 0 ? c.wer : metric == 1 ? c.cer : c.stoi);
      }
    }
    os << '\n';
  }
  return os.str();
}

void write_report(const MetricsReport& report,
                  const std::filesystem::path& base) {
  std::set<Channel> channels;
  for (const auto& r : report.records) channels.insert(r.channel);
  write_text(base.string() + ".json", report_json(report));
  const Channel primary =
      channels.count(Channel::kEnhanced) ? Channel::kEnhanced : Channel::kMic;
  write_text(base.string() + ".csv", report_csv(report, primary));
  for (Channel c : channels) {
    write_text(base.string() + "." + channel_name(c) + ".csv",
               report_csv(report, c));
  }
}

}  // namespace duovoce
