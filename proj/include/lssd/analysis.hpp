// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run analysis: the performance deficit between the overall best checkpoint
// and the per-language bests, plus translation metrics on token ids.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lssd/data.hpp"
#include "lssd/model.hpp"
#include "lssd/train.hpp"

namespace lssd {

struct DubEntry {
  std::string language;
  double overall_best_dev_loss = 0.0;
  double language_best_dev_loss = 0.0;
  double gap = 0.0;
  std::uint32_t best_epoch = 0;
  std::optional<std::uint32_t> first_switch_on;  // k'
};

struct DubReport {
  std::vector<DubEntry> languages;
  double total_dub = 0.0;
  std::uint32_t overall_best_epoch = 0;
  double overall_best_avg_dev_loss = 0.0;
};

// Overall best epoch is the argmin of the average dev loss, earliest on ties.
// Throws std::invalid_argument on an empty log and std::logic_error if a gap
// comes out negative.
DubReport compute_dub(const RunLog& log);

// One "language gap k' best_epoch" line per language, then "total <dub>".
std::string format_dub_report(const DubReport& report);

// Matches over max(len(hyp), len(ref)) positions, summed over pairs.
double token_accuracy(const std::vector<TokenSequence>& hypotheses,
                      const std::vector<TokenSequence>& references);

// Corpus BLEU in [0, 100] from clipped n-gram counts up to max_n. With
// `floor_smoothing`, a zero n-gram match count is replaced by 0.1.
double corpus_bleu(const std::vector<TokenSequence>& hypotheses,
                   const std::vector<TokenSequence>& references, std::size_t max_n = 4,
                   bool floor_smoothing = false);

struct LanguageEval {
  std::string language;
  double token_accuracy = 0.0;
  double bleu = 0.0;
  double nll = 0.0;  // unsmoothed token-mean NLL on the evaluated split
  std::size_t sentences = 0;
};

struct EvalReport {
  std::string checkpoint;
  std::uint32_t checkpoint_epoch = 0;
  std::string split;
  std::vector<LanguageEval> languages;
};

// Greedy-decodes every sentence of `split` for each language. Target
// sequences are compared without their end marker.
EvalReport evaluate(Seq2SeqModel& model, const MultilingualCorpus& corpus, Split split,
                    const std::string& checkpoint_label, std::uint32_t checkpoint_epoch);

// "key = value" lines, one block per language.
std::string format_eval_report(const EvalReport& report);

// Rebuilds the epoch records of a run directory from its CSV files.
RunLog read_run_log(const std::filesystem::path& run_dir);

}  // namespace lssd
