// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Training loop: random crops of corpus utterances are re-mixed with fresh
// noise each step, enhanced, and scored with the enhancement loss plus the
// distillation losses against the frozen teacher.

#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "duovoce/dataset.hpp"
#include "duovoce/ddccrn.hpp"
#include "duovoce/losses.hpp"
#include "duovoce/teacher.hpp"

namespace duovoce {

enum class OptimizerKind { kSgd, kAdam };

struct TrainConfig {
  DdccrnConfig model;
  LossWeights weights;
  std::size_t steps = 500;
  std::size_t batch_size = 4;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::string manifest_path;
  std::string checkpoint_out;
  // Optional JSON Lines loss log; empty disables it.
  std::string log_path;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double crop_seconds = 0.5;
  double clip_norm = 5.0;
  double min_level_db = -10.0;
  double max_level_db = 10.0;
};

// Throws std::invalid_argument for steps == 0, lr <= 0 and other bad fields.
void validate(const TrainConfig& cfg);
// Unknown keys are rejected so typos do not silently fall back to defaults.
TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepLog {
  std::size_t step = 0;
  double total = 0.0;
  double ae = 0.0;
  double soft = 0.0;
  double hard = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  DdccrnModel model;
  std::vector<StepLog> log;
};

// In-memory view of a corpus used for sampling crops.
struct TrainingData {
  std::vector<Waveform> clean;
  std::vector<Waveform> vib;
  std::vector<Waveform> noise;  // noise bank clips
};

TrainingData load_training_data(const CorpusManifest& manifest,
                                std::uint64_t seed);

// Runs the loop from a fresh build(cfg.model, cfg.seed). Throws
// NumericalError when a loss becomes non-finite. `on_step` sees every log
// entry as it is produced.
TrainResult train(const TrainConfig& cfg, const TrainingData& data,
                  const StubTeacher& teacher,
                  const std::function<void(const StepLog&)>& on_step = {});
// Loads the manifest, trains, writes the checkpoint and optional log.
TrainResult train(const TrainConfig& cfg);

}  // namespace duovoce
