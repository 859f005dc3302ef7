// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Epoch loop with per-language best-checkpoint teachers and distillation
// switches. After every epoch each language's dev loss is compared with its
// best so far: a strict improvement turns the switch off and makes the current
// model that language's teacher; anything else turns the switch on, so the
// next epoch distills that language from its best checkpoint.

#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lssd/data.hpp"
#include "lssd/distill.hpp"
#include "lssd/model.hpp"

namespace lssd {

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t steps_per_epoch = 100;
  std::size_t batch_size = 32;
  LossConfig loss;
  double tau = 1.0;
  bool smoothed_dev_loss = true;
  double lr_scale = 2.0;
  std::size_t warmup_steps = 400;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  std::uint64_t seed = 1;
  std::size_t dev_batch_size = 64;
  bool log_steps = false;

  void validate() const;
};

struct LanguageState {
  bool switch_on = false;
  double best_dev_loss = std::numeric_limits<double>::infinity();
  SnapshotPtr teacher;
  std::optional<std::uint32_t> first_switch_on_epoch;
};

struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  OptimizerState() = default;
  OptimizerState(const Seq2SeqModel& model, double b1, double b2, double epsilon);
};

// Bias-corrected Adam update; clears gradients afterwards. Throws
// NumericError naming a parameter whose gradient is missing or non-finite.
void adam_step(Seq2SeqModel& model, OptimizerState& state, double lr);

// lr_scale * d^-0.5 * min(step^-0.5, step * warmup^-1.5)
double lr_at(std::uint64_t step, double lr_scale, std::size_t warmup_steps, std::size_t embed_dim);

// Applies one validation outcome to a language state. Returns true when the
// teacher was replaced by a snapshot of `model`.
bool update_language_state(LanguageState& state, double dev_loss, const Seq2SeqModel& model,
                           std::uint32_t epoch);

struct EpochRecord {
  std::uint32_t epoch = 0;
  std::vector<double> dev_losses;
  double avg_dev_loss = 0.0;
  std::vector<bool> switch_after;
  std::vector<bool> teacher_replaced;
  double mean_train_loss = 0.0;
};

struct StepRecord {
  std::uint64_t step = 0;
  std::size_t language = 0;
  double combined_loss = 0.0;
  double mean_g = 0.0;
};

struct RunLog {
  std::vector<std::string> languages;
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;

  // Epoch of the first switch-on event per language.
  std::vector<std::optional<std::uint32_t>> first_switch_on() const;
  bool operator==(const RunLog&) const;
};

struct RunResult {
  RunLog log;
  Seq2SeqModel final_model;
  std::vector<SnapshotPtr> language_best;
  SnapshotPtr overall_best;
  SnapshotPtr final_snapshot;
};

class Trainer {
 public:
  Trainer(const MultilingualCorpus& corpus, const ModelConfig& model_config,
          const TrainConfig& train_config);

  // One optimizer update on `batch` drawn from language `lang`.
  LossBreakdown train_step(std::size_t lang, const Batch& batch);

  // Per-language dev losses of the current model, without state changes.
  std::vector<double> dev_losses();

  // Validation stage for `epoch`: dev losses, then switch/teacher updates.
  std::vector<double> validate_and_update(std::uint32_t epoch);

  // K epochs of T steps each.
  RunResult run();

  Seq2SeqModel& model() { return model_; }
  const std::vector<LanguageState>& states() const { return states_; }
  const LanguageState& single_teacher_state() const { return global_state_; }
  std::uint64_t teacher_forward_count() const { return teacher_forwards_; }
  const OptimizerState& optimizer() const { return optimizer_; }

 private:
  double dev_loss(std::size_t lang);
  Batch next_train_batch(std::size_t lang);
  void refresh_teacher(std::size_t slot, const Snapshot& snap);
  bool uses_single_teacher() const { return train_config_.loss.mode == LossMode::kStsd; }

  const MultilingualCorpus& corpus_;
  TrainConfig train_config_;
  Seq2SeqModel model_;
  OptimizerState optimizer_;
  std::vector<LanguageState> states_;
  LanguageState global_state_;
  // Read-only teacher copies; one per language, or one in single-teacher mode.
  std::vector<std::unique_ptr<Seq2SeqModel>> teachers_;
  std::mt19937_64 rng_;
  std::vector<std::vector<std::size_t>> order_;
  std::vector<std::size_t> cursor_;
  std::uint64_t teacher_forwards_ = 0;
  std::vector<EpochRecord> epochs_;
  std::vector<bool> last_replaced_;
  bool last_global_replaced_ = false;
};

RunResult run_training(const MultilingualCorpus& corpus, const ModelConfig& model_config,
                       const TrainConfig& train_config);

// Writes config.ini, loss_curves.csv, avg_dev_loss.csv, final.lssd and
// checkpoints/{overall_best,best_<language>}.lssd.
void write_run_directory(const RunResult& result, const std::filesystem::path& dir,
                         const std::string& config_echo);

// Shortest round-trip decimal form.
std::string format_real(double value);

}  // namespace lssd
