// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lssd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lssd {

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::kBaseline: return "baseline";
    case LossMode::kLssdWhole: return "lssd_whole";
    case LossMode::kLssdSelective: return "lssd_selective";
    case LossMode::kLssdAdaptive: return "lssd_adaptive";
    case LossMode::kStsd: return "stsd";
  }
  return "?";
}

LossMode parse_loss_mode(const std::string& name) {
  for (auto m : {LossMode::kBaseline, LossMode::kLssdWhole, LossMode::kLssdSelective,
                 LossMode::kLssdAdaptive, LossMode::kStsd}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown loss mode '" + name + "'");
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be >= 0");
  if (!(sigma > 1.0) || !std::isfinite(sigma)) throw std::invalid_argument("sigma must be > 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw std::invalid_argument("label_smoothing must lie in [0, 1)");
  }
}

namespace {

template <std::floating_point T>
void check_dists(const BasicTensor<T>& dists, std::size_t rows, std::size_t cols,
                 std::size_t mask_size, const char* what) {
  if (dists.rank() != 3 || dists.dim(0) != rows || dists.dim(1) != cols) {
    throw ShapeError(std::string(what) + ": distributions " + shape_str(dists.shape()) +
                     " do not match a " + std::to_string(rows) + "x" + std::to_string(cols) + " batch");
  }
  if (mask_size != rows * cols) throw ShapeError(std::string(what) + ": mask size mismatch");
}

// -sum(weights * log(max(p, floor))), weights a constant [B, T, V] tensor.
template <std::floating_point T>
BasicTensor<T> weighted_log_likelihood(Tape<T>& tape, const BasicTensor<T>& dists,
                                       std::vector<T> weights) {
  auto logp = ops::log(tape, dists, static_cast<T>(kLogFloor));
  auto w = BasicTensor<T>(dists.shape(), std::move(weights));
  return ops::scale(tape, ops::sum(tape, ops::mul(tape, logp, w)), T(-1));
}

}  // namespace

template <std::floating_point T>
BasicTensor<T> nmt_loss(Tape<T>& tape, const BasicTensor<T>& dists, const TokenMatrix& targets,
                        std::span<const std::uint8_t> mask, double label_smoothing) {
  check_dists(dists, targets.rows, targets.cols, mask.size(), "nmt_loss");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw std::invalid_argument("label smoothing must lie in [0, 1)");
  }
  const std::size_t vocab = dists.dim(2);
  const std::size_t tokens = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
  if (tokens == 0) throw std::invalid_argument("nmt_loss: mask selects no tokens");
  const double inv = 1.0 / static_cast<double>(tokens);
  const double off = label_smoothing / static_cast<double>(vocab);
  std::vector<T> q(dists.size(), T(0));
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const auto target = targets.ids[i];
    if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
      throw ShapeError("nmt_loss: target id " + std::to_string(target) + " outside vocabulary");
    }
    T* row = q.data() + i * vocab;
    for (std::size_t w = 0; w < vocab; ++w) row[w] = static_cast<T>(off * inv);
    row[static_cast<std::size_t>(target)] = static_cast<T>((1.0 - label_smoothing + off) * inv);
  }
  return weighted_log_likelihood(tape, dists, std::move(q));
}

template <std::floating_point T>
BasicTensor<T> distill_loss(Tape<T>& tape, const BasicTensor<T>& teacher_dists,
                            const BasicTensor<T>& student_dists, std::span<const std::uint8_t> mask,
                            std::span<const double> g) {
  if (teacher_dists.shape() != student_dists.shape()) {
    throw ShapeError("distill_loss: teacher " + shape_str(teacher_dists.shape()) + " vs student " +
                     shape_str(student_dists.shape()));
  }
  if (student_dists.rank() != 3) throw ShapeError("distill_loss expects [B, T, V] distributions");
  const std::size_t rows = student_dists.dim(0);
  const std::size_t cols = student_dists.dim(1);
  const std::size_t vocab = student_dists.dim(2);
  check_dists(student_dists, rows, cols, mask.size(), "distill_loss");
  if (g.size() != rows) throw ShapeError("distill_loss: one weight per sample required");
  for (double w : g) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("distill_loss: negative sample weight");
  }
  const std::size_t tokens = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
  if (tokens == 0) throw std::invalid_argument("distill_loss: mask selects no tokens");
  const double inv = 1.0 / static_cast<double>(tokens);
  const auto teacher = teacher_dists.values();
  std::vector<T> weights(student_dists.size(), T(0));
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double scale = g[i / cols] * inv;
    if (scale == 0.0) continue;
    for (std::size_t w = 0; w < vocab; ++w) {
      weights[i * vocab + w] = static_cast<T>(teacher[i * vocab + w] * scale);
    }
  }
  return weighted_log_likelihood(tape, student_dists, std::move(weights));
}

template <std::floating_point T>
double sentence_probability(const BasicTensor<T>& dists, std::span<const TokenId> targets,
                            std::span<const std::uint8_t> mask, SentenceProbabilityRule rule) {
  const std::size_t vocab = dists.shape().back();
  const std::size_t len = dists.size() / vocab;
  if (targets.size() != len || mask.size() != len) {
    throw ShapeError("sentence_probability: " + std::to_string(len) + " positions, " +
                     std::to_string(targets.size()) + " targets, " + std::to_string(mask.size()) +
                     " mask entries");
  }
  const auto v = dists.values();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < len; ++i) {
    if (!mask[i]) continue;
    const double p = v[i * vocab + static_cast<std::size_t>(targets[i])];
    total += rule == SentenceProbabilityRule::kArithmetic ? p : std::log(std::max(p, kLogFloor));
    ++count;
  }
  if (count == 0) throw std::invalid_argument("sentence_probability: empty mask");
  const double mean = total / static_cast<double>(count);
  return rule == SentenceProbabilityRule::kArithmetic ? mean : std::exp(mean);
}

template <std::floating_point T>
std::vector<double> sentence_probabilities(const BasicTensor<T>& dists, const TokenMatrix& targets,
                                           std::span<const std::uint8_t> mask,
                                           SentenceProbabilityRule rule) {
  check_dists(dists, targets.rows, targets.cols, mask.size(), "sentence_probabilities");
  const std::size_t vocab = dists.dim(2);
  std::vector<double> out;
  out.reserve(targets.rows);
  for (std::size_t r = 0; r < targets.rows; ++r) {
    const std::size_t base = r * targets.cols;
    std::vector<T> row(dists.values().begin() + static_cast<std::ptrdiff_t>(base * vocab),
                       dists.values().begin() + static_cast<std::ptrdiff_t>((base + targets.cols) * vocab));
    BasicTensor<T> slice({targets.cols, vocab}, std::move(row));
    out.push_back(sentence_probability(slice, targets.row(r), mask.subspan(base, targets.cols), rule));
  }
  return out;
}

double sample_weight(LossMode mode, double p_teacher, double p_student, double sigma) {
  if (!(p_teacher > 0.0) || !(p_student > 0.0)) {
    throw std::invalid_argument("sample_weight needs positive sentence probabilities");
  }
  switch (mode) {
    case LossMode::kLssdWhole:
    case LossMode::kStsd:
      return 1.0;
    case LossMode::kLssdSelective:
      return p_teacher >= p_student ? 1.0 : 0.0;
    case LossMode::kLssdAdaptive:
      if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
      return std::min(p_teacher / p_student, sigma);
    case LossMode::kBaseline:
      break;
  }
  throw std::invalid_argument("baseline mode has no distillation weight");
}

template <std::floating_point T>
BasicTensor<T> combined_loss(Tape<T>& tape, const BasicTensor<T>& nmt, const BasicTensor<T>& distill,
                             double alpha, bool switch_on) {
  if (!switch_on) return nmt;
  return ops::add(tape, nmt, ops::scale(tape, distill, static_cast<T>(alpha)));
}

#define LSSD_INSTANTIATE(T)                                                                       \
  template BasicTensor<T> nmt_loss(Tape<T>&, const BasicTensor<T>&, const TokenMatrix&,           \
                                   std::span<const std::uint8_t>, double);                        \
  template BasicTensor<T> distill_loss(Tape<T>&, const BasicTensor<T>&, const BasicTensor<T>&,    \
                                       std::span<const std::uint8_t>, std::span<const double>);   \
  template double sentence_probability(const BasicTensor<T>&, std::span<const TokenId>,           \
                                       std::span<const std::uint8_t>, SentenceProbabilityRule);   \
  template std::vector<double> sentence_probabilities(const BasicTensor<T>&, const TokenMatrix&,  \
                                                      std::span<const std::uint8_t>,              \
                                                      SentenceProbabilityRule);                   \
  template BasicTensor<T> combined_loss(Tape<T>&, const BasicTensor<T>&, const BasicTensor<T>&,   \
                                        double, bool);

LSSD_INSTANTIATE(float)
LSSD_INSTANTIATE(double)

#undef LSSD_INSTANTIATE

}  // namespace lssd
