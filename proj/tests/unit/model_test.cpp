// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "lssd/distill.hpp"
#include "lssd/model.hpp"

namespace lssd {
namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 12;
  c.embed_dim = 16;
  c.hidden_dim = 24;
  c.num_layers = 2;
  c.num_heads = 2;
  c.max_seq_len = 10;
  return c;
}

TokenMatrix random_tokens(std::size_t rows, std::size_t cols, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<TokenId> u(3, static_cast<TokenId>(vocab) - 1);
  TokenMatrix m(rows, cols);
  for (auto& id : m.ids) id = u(rng);
  return m;
}

std::vector<float> values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

TEST(ModelConfigTest, Validation) {
  ModelConfig c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelTest, InitIsDeterministicPerSeed) {
  Seq2SeqModel a(small_config(), 7);
  Seq2SeqModel b(small_config(), 7);
  Seq2SeqModel c(small_config(), 8);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].name, b.parameters()[i].name);
    EXPECT_EQ(values(a.parameters()[i].tensor), values(b.parameters()[i].tensor));
    any_diff |= values(a.parameters()[i].tensor) != values(c.parameters()[i].tensor);
  }
  EXPECT_TRUE(any_diff);
}

TEST(ModelTest, ParameterSetIsAFunctionOfConfig) {
  Seq2SeqModel a(small_config(), 1);
  Seq2SeqModel b(small_config(), 2);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].name, b.parameters()[i].name);
    EXPECT_EQ(a.parameters()[i].tensor.shape(), b.parameters()[i].tensor.shape());
    EXPECT_TRUE(a.parameters()[i].tensor.requires_grad());
  }
}

TEST(ModelTest, InitRules) {
  const ModelConfig c = small_config();
  Seq2SeqModel m(c, 3);
  int norms = 0;
  for (const auto& p : m.parameters()) {
    const auto v = values(p.tensor);
    const std::string& n = p.name;
    if (n.ends_with(".gain")) {
      ++norms;
      EXPECT_TRUE(std::all_of(v.begin(), v.end(), [](float x) { return x == 1.0f; })) << n;
    } else if (p.tensor.rank() == 1) {
      EXPECT_TRUE(std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; })) << n;
    } else {
      const double a = std::sqrt(6.0 / static_cast<double>(p.tensor.dim(0) + p.tensor.dim(1)));
      EXPECT_TRUE(std::all_of(v.begin(), v.end(), [a](float x) { return std::abs(x) <= a; })) << n;
    }
  }
  EXPECT_EQ(norms, 2 * 2 + 3 * 2 + 2);
}

TEST(ModelTest, ForwardShapeAndNormalization) {
  std::mt19937_64 rng(4);
  Seq2SeqModel m(small_config(), 1);
  Tape<float> tape(false);
  const Tensor d = m.forward(tape, random_tokens(2, 5, 12, rng), random_tokens(2, 4, 12, rng), false);
  ASSERT_EQ(d.shape(), (Shape{2, 4, 12}));
  for (std::size_t r = 0; r < 8; ++r) {
    double total = 0;
    for (std::size_t w = 0; w < 12; ++w) total += d.values()[r * 12 + w];
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(ModelTest, DecoderIsCausal) {
  std::mt19937_64 rng(9);
  Seq2SeqModel m(small_config(), 2);
  for (int trial = 0; trial < 10; ++trial) {
    const TokenMatrix src = random_tokens(1, 6, 12, rng);
    TokenMatrix tgt = random_tokens(1, 7, 12, rng);
    Tape<float> tape(false);
    const auto base = values(m.forward(tape, src, tgt, false));
    const std::size_t j = static_cast<std::size_t>(trial) % 7;
    tgt.at(0, j) = tgt.at(0, j) == 3 ? 4 : 3;
    const auto changed = values(m.forward(tape, src, tgt, false));
    // Position i sees targets < i, so only positions > j may move.
    for (std::size_t i = 0; i < 7; ++i) {
      bool same = true;
      for (std::size_t w = 0; w < 12; ++w) same &= base[i * 12 + w] == changed[i * 12 + w];
      if (i <= j) {
        EXPECT_TRUE(same) << "position " << i << " changed after edit at " << j;
      } else if (i == j + 1) {
        EXPECT_FALSE(same);
      }
    }
  }
}

TEST(ModelTest, PaddingIsMaskedInAttention) {
  std::mt19937_64 rng(12);
  Seq2SeqModel m(small_config(), 5);
  TokenMatrix src = random_tokens(2, 6, 12, rng);
  TokenMatrix tgt = random_tokens(2, 3, 12, rng);
  src.at(0, 4) = kPadId;
  src.at(0, 5) = kPadId;
  TokenMatrix short_src(1, 4);
  std::copy_n(src.ids.begin(), 4, short_src.ids.begin());
  TokenMatrix tgt0(1, 3);
  std::copy_n(tgt.ids.begin(), 3, tgt0.ids.begin());
  Tape<float> tape(false);
  const auto batched = values(m.forward(tape, src, tgt, false));
  const auto alone = values(m.forward(tape, short_src, tgt0, false));
  for (std::size_t i = 0; i < alone.size(); ++i) EXPECT_NEAR(batched[i], alone[i], 1e-5);
}

TEST(ModelTest, EvalModeForwardIsDeterministic) {
  std::mt19937_64 rng(6);
  ModelConfig c = small_config();
  c.dropout = 0.3;
  Seq2SeqModel m(c, 1);
  const TokenMatrix src = random_tokens(3, 5, 12, rng);
  const TokenMatrix tgt = random_tokens(3, 5, 12, rng);
  Tape<float> tape(false);
  EXPECT_EQ(values(m.forward(tape, src, tgt, false)), values(m.forward(tape, src, tgt, false)));
  EXPECT_NE(values(m.forward(tape, src, tgt, true)), values(m.forward(tape, src, tgt, false)));
}

TEST(ModelTest, RejectsBadTokens) {
  Seq2SeqModel m(small_config(), 1);
  Tape<float> tape(false);
  TokenMatrix ok(1, 3);
  ok.ids = {3, 4, 5};
  TokenMatrix bad = ok;
  bad.ids[1] = 12;
  EXPECT_THROW(m.forward(tape, bad, ok, false), std::invalid_argument);
  TokenMatrix long_seq(1, 11);
  std::fill(long_seq.ids.begin(), long_seq.ids.end(), 3);
  EXPECT_THROW(m.forward(tape, long_seq, ok, false), std::invalid_argument);
}

TEST(SnapshotTest, CopySemanticsAndRestore) {
  std::mt19937_64 rng(2);
  Seq2SeqModel m(small_config(), 1);
  const TokenMatrix src = random_tokens(2, 5, 12, rng);
  const TokenMatrix tgt = random_tokens(2, 4, 12, rng);
  Tape<float> t0(false);
  const auto before = values(m.forward(t0, src, tgt, false));
  const SnapshotPtr snap = snapshot(m, 3, 1.25);
  EXPECT_EQ(snap->epoch(), 3u);
  EXPECT_EQ(snap->dev_loss(), 1.25);
  const Snapshot copy = *snap;
  for (auto& p : m.parameters()) {
    for (auto& v : p.tensor.mutable_values()) v += 0.01f;
  }
  EXPECT_EQ(*snap, copy);
  restore(m, *snap);
  Tape<float> t1(false);
  EXPECT_EQ(values(m.forward(t1, src, tgt, false)), before);
}

TEST(SnapshotTest, RejectsNonFiniteAndShapeMismatch) {
  Seq2SeqModel m(small_config(), 1);
  ModelConfig other = small_config();
  other.embed_dim = 8;
  Seq2SeqModel n(other, 1);
  try {
    restore(m, *snapshot(n, 0, 0.0));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("embed.tokens"), std::string::npos) << e.what();
  }
  m.parameter("output.bias").mutable_values()[0] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(snapshot(m, 0, 0.0), NumericError);
}

TEST(SnapshotTest, BinaryRoundTripIsExact) {
  Seq2SeqModel m(small_config(), 4);
  const SnapshotPtr snap = snapshot(m, 17, 0.123456789);
  const auto bytes = encode_snapshot(*snap);
  ASSERT_GE(bytes.size(), 24u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LSSD");
  EXPECT_EQ(bytes[4], kSnapshotFormatVersion);
  EXPECT_EQ(bytes[8], 17);
  EXPECT_EQ(decode_snapshot(bytes), *snap);

  const auto path = std::filesystem::temp_directory_path() / "lssd_model_test.lssd";
  save_snapshot(*snap, path);
  EXPECT_EQ(load_snapshot(path), *snap);
  std::filesystem::remove(path);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_snapshot(truncated), std::runtime_error);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_snapshot(bad_magic), std::runtime_error);
}

TEST(GreedyDecodeTest, BoundariesAndDeterminism) {
  std::mt19937_64 rng(1);
  Seq2SeqModel m(small_config(), 3);
  const TokenSequence src{3, 5, 7, 2};
  EXPECT_TRUE(greedy_decode(m, src, 0).empty());
  EXPECT_EQ(greedy_decode(m, src, 6), greedy_decode(m, src, 6));
  EXPECT_LE(greedy_decode(m, src, 6).size(), 6u);
}

TEST(GreedyDecodeTest, ForcedArgmax) {
  Seq2SeqModel m(small_config(), 3);
  auto w = m.parameter("output.weight").mutable_values();
  std::fill(w.begin(), w.end(), 0.0f);
  auto b = m.parameter("output.bias").mutable_values();
  std::fill(b.begin(), b.end(), 0.0f);
  b[3] = 50.0f;
  EXPECT_EQ(greedy_decode(m, TokenSequence{4, 2}, 3), (TokenSequence{3, 3, 3}));
  b[kEosId] = 50.0f;  // tie between 2 and 3 goes to the lower id
  EXPECT_TRUE(greedy_decode(m, TokenSequence{4, 2}, 3).empty());
}

TEST(ModelTest, FullModelGradientCheckInDouble) {
  std::mt19937_64 rng(21);
  ModelConfig c = small_config();
  BasicSeq2Seq<double> m = Seq2SeqModel(c, 11).cast<double>();
  const TokenMatrix src = random_tokens(2, 5, 12, rng);
  const TokenMatrix tgt = random_tokens(2, 4, 12, rng);
  const std::vector<std::uint8_t> mask(8, 1);
  auto loss = [&](Tape<double>& tape) {
    return nmt_loss(tape, m.forward(tape, src, tgt, false), tgt, mask, 0.1);
  };
  Tape<double> tape;
  tape.backward(loss(tape));
  std::size_t checked = 0;
  double worst = 0.0;
  std::string where;
  for (auto& p : m.parameters()) {
    auto vals = p.tensor.mutable_values();
    for (std::size_t i = 0; i < vals.size(); i += 7) {
      const double analytic = p.tensor.grad()[i];
      const double numeric = central_difference<double>(
          [&] {
            Tape<double> t(false);
            return loss(t).item();
          },
          vals[i], 1e-5);
      const double err = relative_error(analytic, numeric);
      if (err > worst) {
        worst = err;
        where = p.name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic) + " numeric " +
                std::to_string(numeric);
      }
      ++checked;
    }
  }
  EXPECT_GT(checked, 200u);
  EXPECT_LT(worst, 1e-4) << where;
}

}  // namespace
}  // namespace lssd
