// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: label-smoothed MLE, self-distillation cross-entropy
// against a frozen teacher, and the per-sentence weights that gate it.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lssd/tensor.hpp"
#include "lssd/tokens.hpp"

namespace lssd {

enum class LossMode { kBaseline, kLssdWhole, kLssdSelective, kLssdAdaptive, kStsd };

std::string to_string(LossMode mode);
LossMode parse_loss_mode(const std::string& name);

enum class SentenceProbabilityRule { kArithmetic, kGeometric };

struct LossConfig {
  double alpha = 2.0;
  double sigma = 2.0;
  double label_smoothing = 0.1;
  LossMode mode = LossMode::kBaseline;
  SentenceProbabilityRule sentence_prob = SentenceProbabilityRule::kArithmetic;

  void validate() const;
};

struct LossBreakdown {
  double nmt_loss = 0.0;
  double distill_loss = 0.0;  // token mean, after G, before alpha
  std::vector<double> g_values;
  double combined = 0.0;
  bool distilled = false;
};

inline constexpr double kLogFloor = 1e-9;

// Token mean over mask of -sum_w q_w log p_w, q = (1 - eps) onehot + eps/|V|.
// `dists` is [B, T, V].
template <std::floating_point T>
BasicTensor<T> nmt_loss(Tape<T>& tape, const BasicTensor<T>& dists, const TokenMatrix& targets,
                        std::span<const std::uint8_t> mask, double label_smoothing);

// Token mean over mask of g_b * (-sum_w teacher_w log student_w). Only the
// teacher's values are read; no gradient reaches it.
template <std::floating_point T>
BasicTensor<T> distill_loss(Tape<T>& tape, const BasicTensor<T>& teacher_dists,
                            const BasicTensor<T>& student_dists, std::span<const std::uint8_t> mask,
                            std::span<const double> g);

// Mean (arithmetic or geometric) of p(target_i) over masked positions of one
// sentence; `dists` is [T, V] or [1, T, V].
template <std::floating_point T>
double sentence_probability(const BasicTensor<T>& dists, std::span<const TokenId> targets,
                            std::span<const std::uint8_t> mask,
                            SentenceProbabilityRule rule = SentenceProbabilityRule::kArithmetic);

// Per-row sentence probabilities of a [B, T, V] batch.
template <std::floating_point T>
std::vector<double> sentence_probabilities(const BasicTensor<T>& dists, const TokenMatrix& targets,
                                           std::span<const std::uint8_t> mask,
                                           SentenceProbabilityRule rule);

// Whole: 1. Selective: [p_teacher >= p_student]. Adaptive: min(p_t / p_s, sigma).
// STSD weights like Whole. Baseline is rejected.
double sample_weight(LossMode mode, double p_teacher, double p_student, double sigma);

template <std::floating_point T>
BasicTensor<T> combined_loss(Tape<T>& tape, const BasicTensor<T>& nmt,
                             const BasicTensor<T>& distill, double alpha, bool switch_on);

}  // namespace lssd
