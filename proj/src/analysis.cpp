// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lssd/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "lssd/distill.hpp"

namespace lssd {

DubReport compute_dub(const RunLog& log) {
  if (log.epochs.empty() || log.languages.empty()) {
    throw std::invalid_argument("compute_dub: run log has no epoch records");
  }
  const std::size_t langs = log.languages.size();
  std::size_t best = 0;
  for (std::size_t e = 1; e < log.epochs.size(); ++e) {
    if (log.epochs[e].avg_dev_loss < log.epochs[best].avg_dev_loss) best = e;
  }
  DubReport report;
  report.overall_best_epoch = log.epochs[best].epoch;
  report.overall_best_avg_dev_loss = log.epochs[best].avg_dev_loss;
  const auto k_prime = log.first_switch_on();
  for (std::size_t l = 0; l < langs; ++l) {
    DubEntry entry;
    entry.language = log.languages[l];
    entry.overall_best_dev_loss = log.epochs[best].dev_losses.at(l);
    std::size_t arg = 0;
    for (std::size_t e = 1; e < log.epochs.size(); ++e) {
      if (log.epochs[e].dev_losses.at(l) < log.epochs[arg].dev_losses.at(l)) arg = e;
    }
    entry.language_best_dev_loss = log.epochs[arg].dev_losses[l];
    entry.best_epoch = log.epochs[arg].epoch;
    entry.gap = entry.overall_best_dev_loss - entry.language_best_dev_loss;
    entry.first_switch_on = k_prime[l];
    if (entry.gap < 0.0) {
      throw std::logic_error("negative deficit for language " + entry.language);
    }
    report.total_dub += entry.gap;
    report.languages.push_back(std::move(entry));
  }
  return report;
}

std::string format_dub_report(const DubReport& report) {
  std::ostringstream os;
  for (const auto& e : report.languages) {
    os << e.language << ' ' << format_real(e.gap) << ' '
       << (e.first_switch_on ? std::to_string(*e.first_switch_on) : std::string("-")) << ' '
       << e.best_epoch << '\n';
  }
  os << "total " << format_real(report.total_dub) << '\n';
  return os.str();
}

double token_accuracy(const std::vector<TokenSequence>& hypotheses,
                      const std::vector<TokenSequence>& references) {
  if (hypotheses.empty()) throw std::invalid_argument("token_accuracy: empty corpus");
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("token_accuracy: hypothesis and reference counts differ");
  }
  std::size_t matched = 0;
  std::size_t positions = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& h = hypotheses[i];
    const auto& r = references[i];
    const std::size_t common = std::min(h.size(), r.size());
    for (std::size_t j = 0; j < common; ++j) matched += h[j] == r[j] ? 1 : 0;
    positions += std::max(h.size(), r.size());
  }
  return positions == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(positions);
}

namespace {

std::map<TokenSequence, std::size_t> ngram_counts(const TokenSequence& s, std::size_t n) {
  std::map<TokenSequence, std::size_t> counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++counts[TokenSequence(s.begin() + static_cast<std::ptrdiff_t>(i),
                           s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

double corpus_bleu(const std::vector<TokenSequence>& hypotheses,
                   const std::vector<TokenSequence>& references, std::size_t max_n,
                   bool floor_smoothing) {
  if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("corpus_bleu: hypothesis and reference counts differ");
  }
  if (max_n == 0) throw std::invalid_argument("corpus_bleu: max_n must be at least 1");
  std::vector<std::size_t> matches(max_n, 0);
  std::vector<std::size_t> totals(max_n, 0);
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_len += hypotheses[i].size();
    ref_len += references[i].size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto hc = ngram_counts(hypotheses[i], n);
      const auto rc = ngram_counts(references[i], n);
      for (const auto& [gram, count] : hc) {
        const auto it = rc.find(gram);
        matches[n - 1] += std::min(count, it == rc.end() ? std::size_t{0} : it->second);
        totals[n - 1] += count;
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_precision = 0.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (totals[n] == 0) return 0.0;
    double m = static_cast<double>(matches[n]);
    if (m == 0.0) {
      if (!floor_smoothing) return 0.0;
      m = 0.1;
    }
    log_precision += std::log(m / static_cast<double>(totals[n]));
  }
  log_precision /= static_cast<double>(max_n);
  const double bp =
      hyp_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)) : 1.0;
  return 100.0 * bp * std::exp(log_precision);
}

EvalReport evaluate(Seq2SeqModel& model, const MultilingualCorpus& corpus, Split split,
                    const std::string& checkpoint_label, std::uint32_t checkpoint_epoch) {
  EvalReport report;
  report.checkpoint = checkpoint_label;
  report.checkpoint_epoch = checkpoint_epoch;
  report.split = split_name(split);
  for (std::size_t l = 0; l < corpus.languages.size(); ++l) {
    const auto& pairs = corpus.languages[l].split(split);
    LanguageEval eval;
    eval.language = corpus.languages[l].spec.name;
    eval.sentences = pairs.size();
    if (pairs.empty()) {
      report.languages.push_back(eval);
      continue;
    }
    std::vector<TokenSequence> hyps;
    std::vector<TokenSequence> refs;
    for (const auto& p : pairs) {
      hyps.push_back(greedy_decode(model, p.src, model.config().max_seq_len));
      refs.emplace_back(p.tgt.begin(), p.tgt.end() - 1);
    }
    eval.token_accuracy = token_accuracy(hyps, refs);
    eval.bleu = corpus_bleu(hyps, refs);
    double total = 0.0;
    std::size_t tokens = 0;
    constexpr std::size_t kBatch = 64;
    for (std::size_t start = 0; start < pairs.size(); start += kBatch) {
      std::vector<std::size_t> idx(std::min(kBatch, pairs.size() - start));
      std::iota(idx.begin(), idx.end(), start);
      const Batch batch = make_batch(corpus, l, split, idx);
      Tape<float> tape(false);
      const auto dists = model.forward(tape, batch.src, batch.tgt, false);
      total += static_cast<double>(nmt_loss(tape, dists, batch.tgt, batch.mask, 0.0).item()) *
               static_cast<double>(batch.token_count());
      tokens += batch.token_count();
    }
    eval.nll = total / static_cast<double>(tokens);
    report.languages.push_back(eval);
  }
  return report;
}

std::string format_eval_report(const EvalReport& report) {
  std::ostringstream os;
  os << "checkpoint = " << report.checkpoint << '\n';
  os << "checkpoint_epoch = " << report.checkpoint_epoch << '\n';
  os << "split = " << report.split << '\n';
  for (const auto& l : report.languages) {
    os << '\n' << "[" << l.language << "]\n";
    os << "sentences = " << l.sentences << '\n';
    os << "token_accuracy = " << format_real(l.token_accuracy) << '\n';
    os << "bleu = " << format_real(l.bleu) << '\n';
    os << "nll = " << format_real(l.nll) << '\n';
  }
  return os.str();
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  return out;
}

double parse_double(const std::string& s, const std::filesystem::path& file) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw DataError(file.string() + ": bad number '" + s + "'");
  return v;
}

}  // namespace

RunLog read_run_log(const std::filesystem::path& run_dir) {
  const auto curves = run_dir / "loss_curves.csv";
  const auto averages = run_dir / "avg_dev_loss.csv";
  std::ifstream in(curves);
  if (!in) throw DataError("cannot open " + curves.string());
  std::string line;
  std::getline(in, line);
  if (line != "epoch,language,dev_loss,switch_after,teacher_replaced") {
    throw DataError(curves.string() + ": unexpected header");
  }
  RunLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 5 || (f[3] != "on" && f[3] != "off") || (f[4] != "0" && f[4] != "1")) {
      throw DataError(curves.string() + ": malformed row '" + line + "'");
    }
    const auto epoch = static_cast<std::uint32_t>(parse_double(f[0], curves));
    if (log.epochs.empty() || log.epochs.back().epoch != epoch) {
      if (!log.epochs.empty() && epoch != log.epochs.back().epoch + 1) {
        throw DataError(curves.string() + ": epochs are not consecutive");
      }
      log.epochs.emplace_back();
      log.epochs.back().epoch = epoch;
    }
    auto& rec = log.epochs.back();
    if (log.epochs.size() == 1) {
      log.languages.push_back(f[1]);
    } else if (rec.dev_losses.size() >= log.languages.size() ||
               log.languages[rec.dev_losses.size()] != f[1]) {
      throw DataError(curves.string() + ": language order differs between epochs");
    }
    rec.dev_losses.push_back(parse_double(f[2], curves));
    rec.switch_after.push_back(f[3] == "on");
    rec.teacher_replaced.push_back(f[4] == "1");
  }
  if (log.epochs.empty()) throw DataError(curves.string() + ": no records");
  for (const auto& rec : log.epochs) {
    if (rec.dev_losses.size() != log.languages.size()) {
      throw DataError(curves.string() + ": epoch " + std::to_string(rec.epoch) + " is incomplete");
    }
  }
  std::ifstream avg(averages);
  if (!avg) throw DataError("cannot open " + averages.string());
  std::getline(avg, line);
  if (line != "epoch,avg_dev_loss") throw DataError(averages.string() + ": unexpected header");
  std::size_t row = 0;
  while (std::getline(avg, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 2 || row >= log.epochs.size() ||
        static_cast<std::uint32_t>(parse_double(f[0], averages)) != log.epochs[row].epoch) {
      throw DataError(averages.string() + ": does not match loss_curves.csv");
    }
    log.epochs[row++].avg_dev_loss = parse_double(f[1], averages);
  }
  if (row != log.epochs.size()) throw DataError(averages.string() + ": missing epochs");
  return log;
}

}  // namespace lssd
