// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "lssd/analysis.hpp"

namespace lssd {
namespace {

RunLog make_log(const std::vector<std::vector<double>>& per_epoch) {
  RunLog log;
  for (std::size_t l = 0; l < per_epoch.front().size(); ++l) log.languages.push_back("x" + std::to_string(l));
  for (std::size_t e = 0; e < per_epoch.size(); ++e) {
    EpochRecord r;
    r.epoch = static_cast<std::uint32_t>(e + 1);
    r.dev_losses = per_epoch[e];
    double sum = 0;
    for (double x : per_epoch[e]) sum += x;
    r.avg_dev_loss = sum / static_cast<double>(per_epoch[e].size());
    r.switch_after.assign(per_epoch[e].size(), false);
    r.teacher_replaced.assign(per_epoch[e].size(), false);
    log.epochs.push_back(r);
  }
  return log;
}

TEST(DubTest, ArithmeticExample) {
  // Epoch 2 holds the best average (2.5); language 0 peaked at epoch 1.
  const auto r = compute_dub(make_log({{1.5, 4.0}, {2.0, 3.0}}));
  EXPECT_EQ(r.overall_best_epoch, 2u);
  EXPECT_DOUBLE_EQ(r.languages[0].gap, 0.5);
  EXPECT_DOUBLE_EQ(r.languages[1].gap, 0.0);
  EXPECT_DOUBLE_EQ(r.total_dub, 0.5);
  EXPECT_EQ(r.languages[0].best_epoch, 1u);
}

TEST(DubTest, CoincidentOptimaAndSingleLanguage) {
  EXPECT_EQ(compute_dub(make_log({{3, 4}, {1, 2}, {2, 3}})).total_dub, 0.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.5, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<double>> losses(10, std::vector<double>(1));
    for (auto& e : losses) e[0] = u(rng);
    EXPECT_EQ(compute_dub(make_log(losses)).total_dub, 0.0);
  }
}

TEST(DubTest, TiesResolveToEarliestEpoch) {
  const auto r = compute_dub(make_log({{2, 2}, {1, 3}, {3, 1}}));
  EXPECT_EQ(r.overall_best_epoch, 1u);
  EXPECT_DOUBLE_EQ(r.total_dub, 2.0);
}

TEST(DubTest, EmptyLogThrows) {
  EXPECT_THROW(compute_dub(RunLog{}), std::invalid_argument);
}

TEST(DubTest, PropertiesOnRandomLogs) {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(0.1, 6.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t langs = 1 + static_cast<std::size_t>(trial % 5);
    std::vector<std::vector<double>> losses(1 + static_cast<std::size_t>(trial % 9), std::vector<double>(langs));
    for (auto& e : losses) {
      for (auto& x : e) x = u(rng);
    }
    const auto r = compute_dub(make_log(losses));
    double sum = 0;
    bool all_zero = true;
    for (const auto& e : r.languages) {
      EXPECT_GE(e.gap, 0.0);
      sum += e.gap;
      all_zero &= e.gap == 0.0;
    }
    EXPECT_NEAR(r.total_dub, sum, 1e-9);
    EXPECT_EQ(r.total_dub == 0.0, all_zero);

    // Permuting languages leaves the total unchanged.
    std::vector<std::size_t> perm(langs);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    auto permuted = losses;
    for (std::size_t e = 0; e < losses.size(); ++e) {
      for (std::size_t l = 0; l < langs; ++l) permuted[e][l] = losses[e][perm[l]];
    }
    EXPECT_NEAR(compute_dub(make_log(permuted)).total_dub, r.total_dub, 1e-9);
  }
}

TEST(DubTest, ReportFormat) {
  auto log = make_log({{1.5, 4.0}, {2.0, 3.0}, {2.5, 3.5}});
  log.epochs[1].switch_after[0] = true;
  const auto text = format_dub_report(compute_dub(log));
  EXPECT_EQ(text, "x0 0.5 2 1\nx1 0 - 2\ntotal 0.5\n");
}

TEST(TokenAccuracyTest, Examples) {
  EXPECT_EQ(token_accuracy({{1, 2, 3}}, {{1, 2, 3}}), 1.0);
  EXPECT_EQ(token_accuracy({{1, 2}}, {{1, 3}}), 0.5);
  EXPECT_DOUBLE_EQ(token_accuracy({{1}}, {{1, 2, 3}}), 1.0 / 3.0);
  EXPECT_THROW(token_accuracy({}, {}), std::invalid_argument);
  EXPECT_THROW(token_accuracy({{1}}, {{1}, {2}}), std::invalid_argument);
}

// Independent BLEU: counts n-grams by brute-force pairwise comparison
// rather than through a map.
double oracle_bleu(const std::vector<TokenSequence>& hyp, const std::vector<TokenSequence>& ref, int max_n) {
  double log_p = 0;
  double hl = 0, rl = 0;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    hl += static_cast<double>(hyp[i].size());
    rl += static_cast<double>(ref[i].size());
  }
  for (int n = 1; n <= max_n; ++n) {
    double match = 0, total = 0;
    for (std::size_t s = 0; s < hyp.size(); ++s) {
      const auto& h = hyp[s];
      const auto& r = ref[s];
      const int hn = static_cast<int>(h.size()) - n + 1;
      const int rn = static_cast<int>(r.size()) - n + 1;
      auto same = [n](const TokenSequence& a, int i, const TokenSequence& b, int j) {
        for (int k = 0; k < n; ++k) {
          if (a[static_cast<std::size_t>(i + k)] != b[static_cast<std::size_t>(j + k)]) return false;
        }
        return true;
      };
      for (int i = 0; i < hn; ++i) {
        bool first = true;
        for (int j = 0; j < i; ++j) first &= !same(h, j, h, i);
        if (!first) continue;
        int in_h = 0, in_r = 0;
        for (int j = 0; j < hn; ++j) in_h += same(h, j, h, i) ? 1 : 0;
        for (int j = 0; j < rn; ++j) in_r += same(r, j, h, i) ? 1 : 0;
        match += std::min(in_h, in_r);
        total += in_h;
      }
    }
    if (total == 0 || match == 0) return 0.0;
    log_p += std::log(match / total);
  }
  const double bp = hl < rl ? std::exp(1 - rl / hl) : 1.0;
  return 100 * bp * std::exp(log_p / max_n);
}

TEST(BleuTest, Examples) {
  EXPECT_NEAR(corpus_bleu({{1, 2, 3, 4}}, {{1, 2, 3, 4, 5}}), 100 * std::exp(-0.25), 1e-9);
  EXPECT_NEAR(corpus_bleu({{1, 2, 3, 4}}, {{1, 2, 3, 4}}), 100.0, 1e-12);
  EXPECT_EQ(corpus_bleu({{1, 2, 3, 4}}, {{5, 6, 7, 8}}), 0.0);
  EXPECT_THROW(corpus_bleu({}, {}), std::invalid_argument);
  EXPECT_THROW(corpus_bleu({{1}}, {{1}}, 0), std::invalid_argument);
}

TEST(BleuTest, FloorSmoothing) {
  // Unigrams and bigrams match; no trigram does.
  const std::vector<TokenSequence> h{{1, 2, 9, 3}};
  const std::vector<TokenSequence> r{{1, 2, 8, 3}};
  EXPECT_EQ(corpus_bleu(h, r), 0.0);
  const double want = 100 * std::exp((std::log(3.0 / 4) + std::log(1.0 / 3) + std::log(0.1 / 2) + std::log(0.1 / 1)) / 4);
  EXPECT_NEAR(corpus_bleu(h, r, 4, true), want, 1e-9);
}

TEST(BleuTest, AgreesWithBruteForceOracle) {
  std::mt19937_64 rng(50);
  std::uniform_int_distribution<int> tok(0, 3), len(1, 9), count(1, 5);
  for (int c = 0; c < 50; ++c) {
    std::vector<TokenSequence> hyp(static_cast<std::size_t>(count(rng))), ref(hyp.size());
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      hyp[i].resize(static_cast<std::size_t>(len(rng)));
      ref[i].resize(static_cast<std::size_t>(len(rng)));
      for (auto& t : hyp[i]) t = tok(rng);
      for (auto& t : ref[i]) t = tok(rng);
    }
    for (const int n : {1, 2, 4}) {
      EXPECT_NEAR(corpus_bleu(hyp, ref, static_cast<std::size_t>(n)), oracle_bleu(hyp, ref, n), 1e-9);
    }
    // Self-BLEU is perfect once a 4-gram exists; without one it is 0.
    const bool has_4gram = std::any_of(hyp.begin(), hyp.end(), [](const auto& h) { return h.size() >= 4; });
    EXPECT_NEAR(corpus_bleu(hyp, hyp), has_4gram ? 100.0 : 0.0, 1e-9);
    std::vector<std::size_t> perm(hyp.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<TokenSequence> ph, pr;
    for (const auto i : perm) {
      ph.push_back(hyp[i]);
      pr.push_back(ref[i]);
    }
    EXPECT_NEAR(corpus_bleu(ph, pr), corpus_bleu(hyp, ref), 1e-9);
  }
}

TEST(RunLogIoTest, RoundTripThroughRunDirectory) {
  std::vector<LanguageSpec> specs;
  for (const char* name : {"p", "q"}) {
    LanguageSpec s;
    s.name = name;
    s.train_size = 12;
    s.dev_size = 4;
    s.test_size = 4;
    s.transform_name = "perm";
    s.transform_param = 2;
    s.transform = Transform::from_spec("perm", 2, 6);
    s.payload_min = 2;
    s.payload_max = 3;
    specs.push_back(s);
  }
  const auto corpus = generate_corpus(specs, 6, 1);
  ModelConfig m;
  m.vocab_size = corpus.vocab.size();
  m.embed_dim = 8;
  m.hidden_dim = 8;
  m.num_layers = 1;
  m.num_heads = 1;
  m.max_seq_len = 6;
  TrainConfig t;
  t.epochs = 3;
  t.steps_per_epoch = 2;
  t.batch_size = 4;
  t.loss.mode = LossMode::kLssdWhole;
  const auto result = run_training(corpus, m, t);
  const auto dir = std::filesystem::temp_directory_path() / "lssd_analysis_run";
  std::filesystem::remove_all(dir);
  write_run_directory(result, dir, "# echo\n");
  const RunLog back = read_run_log(dir);
  EXPECT_EQ(back.languages, result.log.languages);
  ASSERT_EQ(back.epochs.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(back.epochs[e].dev_losses, result.log.epochs[e].dev_losses);
    EXPECT_EQ(back.epochs[e].avg_dev_loss, result.log.epochs[e].avg_dev_loss);
    EXPECT_EQ(back.epochs[e].switch_after, result.log.epochs[e].switch_after);
    EXPECT_EQ(back.epochs[e].teacher_replaced, result.log.epochs[e].teacher_replaced);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints" / "best_q.lssd"));
  EXPECT_TRUE(std::filesystem::exists(dir / "final.lssd"));

  Seq2SeqModel model(m, 0);
  restore(model, *result.overall_best);
  const auto report = evaluate(model, corpus, Split::kTest, "overall", result.overall_best->epoch());
  ASSERT_EQ(report.languages.size(), 2u);
  for (const auto& l : report.languages) {
    EXPECT_EQ(l.sentences, 4u);
    EXPECT_GE(l.token_accuracy, 0.0);
    EXPECT_LE(l.token_accuracy, 1.0);
    EXPECT_GE(l.bleu, 0.0);
    EXPECT_LE(l.bleu, 100.0);
    EXPECT_GT(l.nll, 0.0);
  }
  EXPECT_NE(format_eval_report(report).find("[q]"), std::string::npos);

  std::ofstream(dir / "avg_dev_loss.csv") << "epoch,avg_dev_loss\n1,0.5\n";
  EXPECT_THROW(read_run_log(dir), DataError);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(read_run_log(dir), DataError);
}

}  // namespace
}  // namespace lssd
