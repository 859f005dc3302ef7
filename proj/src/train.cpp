// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lssd/train.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

namespace lssd {

void TrainConfig::validate() const {
  if (epochs == 0 || steps_per_epoch == 0 || batch_size == 0) {
    throw ConfigError("epochs, steps_per_epoch and batch_size must be at least 1");
  }
  if (warmup_steps == 0) throw ConfigError("warmup_steps must be at least 1");
  if (dev_batch_size == 0) throw ConfigError("dev batch size must be at least 1");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(lr_scale > 0.0)) throw ConfigError("lr_scale must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  try {
    loss.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

// ---------------------------------------------------------------------------
// Optimizer

OptimizerState::OptimizerState(const Seq2SeqModel& model, double b1, double b2, double epsilon)
    : beta1(b1), beta2(b2), eps(epsilon) {
  for (const auto& p : model.parameters()) {
    first_moment.emplace_back(p.tensor.size(), 0.0);
    second_moment.emplace_back(p.tensor.size(), 0.0);
  }
}

void adam_step(Seq2SeqModel& model, OptimizerState& state, double lr) {
  auto& params = model.parameters();
  if (state.first_moment.size() != params.size()) {
    throw std::logic_error("optimizer state does not match the model's parameters");
  }
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw NumericError("missing gradient for parameter " + p.name);
    const auto g = p.tensor.grad();
    for (float x : g) {
      if (!std::isfinite(x)) throw NumericError("non-finite gradient for parameter " + p.name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].tensor.mutable_values();
    const auto g = params[i].tensor.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double gj = g[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
      values[j] = static_cast<float>(values[j] - lr * update);
    }
  }
  model.clear_grads();
}

double lr_at(std::uint64_t step, double lr_scale, std::size_t warmup_steps, std::size_t embed_dim) {
  if (step == 0) throw std::invalid_argument("learning-rate schedule starts at step 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup_steps);
  return lr_scale / std::sqrt(static_cast<double>(embed_dim)) *
         std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

// ---------------------------------------------------------------------------
// Switch state machine

bool update_language_state(LanguageState& state, double dev_loss, const Seq2SeqModel& model,
                           std::uint32_t epoch) {
  if (!std::isfinite(dev_loss)) throw NumericError("non-finite dev loss");
  if (dev_loss < state.best_dev_loss) {
    state.switch_on = false;
    state.teacher = snapshot(model, epoch, dev_loss);
    state.best_dev_loss = dev_loss;
    return true;
  }
  state.switch_on = true;
  if (!state.first_switch_on_epoch) state.first_switch_on_epoch = epoch;
  return false;
}

std::vector<std::optional<std::uint32_t>> RunLog::first_switch_on() const {
  std::vector<std::optional<std::uint32_t>> out(languages.size());
  for (const auto& e : epochs) {
    for (std::size_t l = 0; l < languages.size(); ++l) {
      if (!out[l] && e.switch_after[l]) out[l] = e.epoch;
    }
  }
  return out;
}

bool RunLog::operator==(const RunLog& other) const {
  if (languages != other.languages || epochs.size() != other.epochs.size()) return false;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& a = epochs[i];
    const auto& b = other.epochs[i];
    if (a.epoch != b.epoch || a.dev_losses != b.dev_losses || a.avg_dev_loss != b.avg_dev_loss ||
        a.switch_after != b.switch_after || a.teacher_replaced != b.teacher_replaced ||
        a.mean_train_loss != b.mean_train_loss) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(const MultilingualCorpus& corpus, const ModelConfig& model_config,
                 const TrainConfig& train_config)
    : corpus_(corpus),
      train_config_(train_config),
      model_(model_config, train_config.seed),
      rng_(train_config.seed * 0x2545f4914f6cdd1dULL + 17) {
  train_config_.validate();
  if (model_config.vocab_size != corpus.vocab.size()) {
    throw ConfigError("model vocab_size " + std::to_string(model_config.vocab_size) +
                      " differs from corpus vocabulary of " + std::to_string(corpus.vocab.size()));
  }
  if (model_config.max_seq_len < corpus.max_sequence_length()) {
    throw ConfigError("max_seq_len " + std::to_string(model_config.max_seq_len) +
                      " is shorter than the longest sequence (" +
                      std::to_string(corpus.max_sequence_length()) + ")");
  }
  for (const auto& l : corpus.languages) {
    if (l.dev.empty()) throw DataError("language " + l.spec.name + " has an empty dev set");
  }
  optimizer_ = OptimizerState(model_, train_config_.adam_beta1, train_config_.adam_beta2,
                              train_config_.adam_eps);
  const std::size_t languages = corpus.languages.size();
  states_.resize(languages);
  teachers_.resize(uses_single_teacher() ? 1 : languages);
  order_.resize(languages);
  cursor_.assign(languages, 0);
  last_replaced_.assign(languages, false);
}

void Trainer::refresh_teacher(std::size_t slot, const Snapshot& snap) {
  if (train_config_.loss.mode == LossMode::kBaseline) return;
  if (!teachers_[slot]) {
    teachers_[slot] = std::make_unique<Seq2SeqModel>(model_.clone());
    teachers_[slot]->set_requires_grad(false);
  }
  restore(*teachers_[slot], snap);
}

Batch Trainer::next_train_batch(std::size_t lang) {
  const std::size_t n = corpus_.languages[lang].train.size();
  auto& order = order_[lang];
  std::vector<std::size_t> indices;
  indices.reserve(train_config_.batch_size);
  while (indices.size() < std::min(train_config_.batch_size, n)) {
    if (cursor_[lang] == order.size()) {
      order.resize(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng_() % i]);
      cursor_[lang] = 0;
    }
    indices.push_back(order[cursor_[lang]++]);
  }
  return make_batch(corpus_, lang, Split::kTrain, indices);
}

LossBreakdown Trainer::train_step(std::size_t lang, const Batch& batch) {
  if (lang >= states_.size()) throw std::out_of_range("language index out of range");
  const auto& loss_cfg = train_config_.loss;
  Tape<float> tape;
  auto student = model_.forward(tape, batch.src, batch.tgt, true);
  auto nmt = nmt_loss(tape, student, batch.tgt, batch.mask, loss_cfg.label_smoothing);

  LossBreakdown out;
  out.nmt_loss = nmt.item();
  const LanguageState& state = uses_single_teacher() ? global_state_ : states_[lang];
  const bool switch_on = loss_cfg.mode != LossMode::kBaseline && state.switch_on;
  Tensor total = nmt;
  if (switch_on) {
    Seq2SeqModel* teacher = teachers_[uses_single_teacher() ? 0 : lang].get();
    if (!state.teacher || !teacher) {
      throw std::logic_error("distillation switch is on but no teacher checkpoint exists");
    }
    Tape<float> frozen(false);
    const auto teacher_dists = teacher->forward(frozen, batch.src, batch.tgt, false);
    ++teacher_forwards_;
    std::vector<double> g(batch.tgt.rows, 1.0);
    if (loss_cfg.mode == LossMode::kLssdSelective || loss_cfg.mode == LossMode::kLssdAdaptive) {
      const auto pt = sentence_probabilities(teacher_dists, batch.tgt, batch.mask, loss_cfg.sentence_prob);
      const auto ps = sentence_probabilities(student, batch.tgt, batch.mask, loss_cfg.sentence_prob);
      for (std::size_t b = 0; b < g.size(); ++b) {
        g[b] = sample_weight(loss_cfg.mode, pt[b], ps[b], loss_cfg.sigma);
      }
    }
    auto distill = distill_loss(tape, teacher_dists, student, batch.mask, g);
    total = combined_loss(tape, nmt, distill, loss_cfg.alpha, true);
    out.distill_loss = distill.item();
    out.g_values = std::move(g);
    out.distilled = true;
  }
  out.combined = total.item();
  tape.backward(total);
  const double lr = lr_at(optimizer_.step + 1, train_config_.lr_scale, train_config_.warmup_steps,
                          model_.config().embed_dim);
  adam_step(model_, optimizer_, lr);
  return out;
}

double Trainer::dev_loss(std::size_t lang) {
  const auto& dev = corpus_.languages[lang].dev;
  const double eps = train_config_.smoothed_dev_loss ? train_config_.loss.label_smoothing : 0.0;
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < dev.size(); start += train_config_.dev_batch_size) {
    std::vector<std::size_t> idx(std::min(train_config_.dev_batch_size, dev.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Batch batch = make_batch(corpus_, lang, Split::kDev, idx);
    Tape<float> tape(false);
    const auto dists = model_.forward(tape, batch.src, batch.tgt, false);
    const std::size_t n = batch.token_count();
    total += static_cast<double>(nmt_loss(tape, dists, batch.tgt, batch.mask, eps).item()) *
             static_cast<double>(n);
    tokens += n;
  }
  const double loss = total / static_cast<double>(tokens);
  if (!std::isfinite(loss)) throw NumericError("non-finite dev loss for language " + corpus_.languages[lang].spec.name);
  return loss;
}

std::vector<double> Trainer::dev_losses() {
  std::vector<double> out(states_.size());
  for (std::size_t l = 0; l < out.size(); ++l) out[l] = dev_loss(l);
  return out;
}

std::vector<double> Trainer::validate_and_update(std::uint32_t epoch) {
  auto losses = dev_losses();
  for (std::size_t l = 0; l < losses.size(); ++l) {
    last_replaced_[l] = update_language_state(states_[l], losses[l], model_, epoch);
    if (last_replaced_[l] && !uses_single_teacher()) refresh_teacher(l, *states_[l].teacher);
  }
  if (uses_single_teacher()) {
    const double avg = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
    last_global_replaced_ = update_language_state(global_state_, avg, model_, epoch);
    if (last_global_replaced_) refresh_teacher(0, *global_state_.teacher);
  }
  return losses;
}

RunResult Trainer::run() {
  const auto probs = temperature_probs(corpus_.train_sizes(), train_config_.tau);
  RunLog log;
  for (const auto& l : corpus_.languages) log.languages.push_back(l.spec.name);
  SnapshotPtr overall_best;
  double best_avg = std::numeric_limits<double>::infinity();
  for (std::uint32_t epoch = 1; epoch <= train_config_.epochs; ++epoch) {
    double train_loss = 0.0;
    for (std::size_t t = 0; t < train_config_.steps_per_epoch; ++t) {
      const std::size_t lang = sample_language(probs, rng_);
      const auto breakdown = train_step(lang, next_train_batch(lang));
      train_loss += breakdown.combined;
      if (train_config_.log_steps) {
        double mean_g = 0.0;
        for (double g : breakdown.g_values) mean_g += g;
        if (!breakdown.g_values.empty()) mean_g /= static_cast<double>(breakdown.g_values.size());
        log.steps.push_back({optimizer_.step, lang, breakdown.combined, mean_g});
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.dev_losses = validate_and_update(epoch);
    rec.avg_dev_loss = std::accumulate(rec.dev_losses.begin(), rec.dev_losses.end(), 0.0) /
                       static_cast<double>(rec.dev_losses.size());
    for (std::size_t l = 0; l < states_.size(); ++l) {
      rec.switch_after.push_back(uses_single_teacher() ? global_state_.switch_on : states_[l].switch_on);
      rec.teacher_replaced.push_back(uses_single_teacher() ? last_global_replaced_ : last_replaced_[l]);
    }
    rec.mean_train_loss = train_loss / static_cast<double>(train_config_.steps_per_epoch);
    if (rec.avg_dev_loss < best_avg) {
      best_avg = rec.avg_dev_loss;
      overall_best = uses_single_teacher() ? global_state_.teacher
                                           : snapshot(model_, epoch, rec.avg_dev_loss);
    }
    log.epochs.push_back(std::move(rec));
  }
  RunResult result{std::move(log), model_.clone(), {}, overall_best, nullptr};
  for (const auto& s : states_) result.language_best.push_back(s.teacher);
  result.final_snapshot = snapshot(model_, static_cast<std::uint32_t>(train_config_.epochs),
                                   result.log.epochs.back().avg_dev_loss);
  return result;
}

RunResult run_training(const MultilingualCorpus& corpus, const ModelConfig& model_config,
                       const TrainConfig& train_config) {
  Trainer trainer(corpus, model_config, train_config);
  return trainer.run();
}

// ---------------------------------------------------------------------------
// Run directory

std::string format_real(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

void write_run_directory(const RunResult& result, const std::filesystem::path& dir,
                         const std::string& config_echo) {
  std::filesystem::create_directories(dir / "checkpoints");
  {
    std::ofstream out(dir / "config.ini");
    out << config_echo;
  }
  {
    std::ofstream out(dir / "loss_curves.csv");
    out << "epoch,language,dev_loss,switch_after,teacher_replaced\n";
    for (const auto& e : result.log.epochs) {
      for (std::size_t l = 0; l < result.log.languages.size(); ++l) {
        out << e.epoch << ',' << result.log.languages[l] << ',' << format_real(e.dev_losses[l]) << ','
            << (e.switch_after[l] ? "on" : "off") << ',' << (e.teacher_replaced[l] ? 1 : 0) << '\n';
      }
    }
  }
  {
    std::ofstream out(dir / "avg_dev_loss.csv");
    out << "epoch,avg_dev_loss\n";
    for (const auto& e : result.log.epochs) out << e.epoch << ',' << format_real(e.avg_dev_loss) << '\n';
  }
  if (result.overall_best) save_snapshot(*result.overall_best, dir / "checkpoints" / "overall_best.lssd");
  for (std::size_t l = 0; l < result.language_best.size(); ++l) {
    if (result.language_best[l]) {
      save_snapshot(*result.language_best[l],
                    dir / "checkpoints" / ("best_" + result.log.languages[l] + ".lssd"));
    }
  }
  if (result.final_snapshot) save_snapshot(*result.final_snapshot, dir / "final.lssd");
}

}  // namespace lssd
