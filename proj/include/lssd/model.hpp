// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pre-norm transformer encoder-decoder over a shared vocabulary with a shared
// source/target embedding table and sinusoidal positions.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "lssd/tensor.hpp"
#include "lssd/tokens.hpp"

namespace lssd {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t max_seq_len = 32;
  double dropout = 0.0;

  // Throws ConfigError.
  void validate() const;
};

template <std::floating_point T>
struct NamedParameter {
  std::string name;
  BasicTensor<T> tensor;
};

template <std::floating_point T>
class BasicSeq2Seq {
 public:
  using TensorT = BasicTensor<T>;

  // Xavier-uniform weights, zero biases, unit layer-norm scales.
  BasicSeq2Seq(const ModelConfig& config, std::uint64_t seed);

  BasicSeq2Seq(BasicSeq2Seq&&) noexcept = default;
  BasicSeq2Seq& operator=(BasicSeq2Seq&&) noexcept = default;
  BasicSeq2Seq(const BasicSeq2Seq&) = delete;
  BasicSeq2Seq& operator=(const BasicSeq2Seq&) = delete;

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedParameter<T>>& parameters() const { return params_; }
  std::vector<NamedParameter<T>>& parameters() { return params_; }
  TensorT& parameter(std::string_view name);
  std::size_t parameter_count() const;

  void set_requires_grad(bool on);
  void clear_grads();

  // Independent deep copy (same config, same values, fresh dropout stream).
  BasicSeq2Seq clone() const;
  template <std::floating_point U>
  BasicSeq2Seq<U> cast() const;

  // Distributions P(w | x, y_<i) as [B, T, V]. The decoder consumes the
  // target shifted right behind a begin-of-sequence token.
  TensorT forward(Tape<T>& tape, const TokenMatrix& src, const TokenMatrix& tgt, bool train_mode);

  // Encoder states [B, S, D].
  TensorT encode(Tape<T>& tape, const TokenMatrix& src, bool train_mode);
  // Distributions for explicit decoder inputs (already shifted) against an
  // encoded source.
  TensorT decode(Tape<T>& tape, const TensorT& memory, const TokenMatrix& src,
                 const TokenMatrix& decoder_input, bool train_mode);

  // Number of forward passes executed; used to observe teacher usage.
  std::uint64_t forward_count() const { return forward_count_; }

 private:
  struct Attention {
    TensorT wq, bq, wk, wv, bv, wo, bo;
  };
  struct LayerNorm {
    TensorT gain, bias;
  };
  struct FeedForward {
    TensorT w1, b1, w2, b2;
  };
  struct EncoderLayer {
    LayerNorm norm_attn, norm_ffn;
    Attention self_attn;
    FeedForward ffn;
  };
  struct DecoderLayer {
    LayerNorm norm_self, norm_cross, norm_ffn;
    Attention self_attn, cross_attn;
    FeedForward ffn;
  };

  TensorT& add_param(std::string name, Shape shape, std::mt19937_64& rng, char init);
  Attention make_attention(const std::string& prefix, std::mt19937_64& rng);
  LayerNorm make_norm(const std::string& prefix, std::mt19937_64& rng);
  FeedForward make_ffn(const std::string& prefix, std::mt19937_64& rng);

  TensorT embed(Tape<T>& tape, const TokenMatrix& tokens, bool train_mode);
  TensorT attention(Tape<T>& tape, const Attention& p, const TensorT& query, const TensorT& memory,
                    const TensorT& mask);
  TensorT layer_norm(Tape<T>& tape, const LayerNorm& p, const TensorT& x);
  TensorT feed_forward(Tape<T>& tape, const FeedForward& p, const TensorT& x);
  TensorT linear(Tape<T>& tape, const TensorT& x, const TensorT& w, const TensorT& b);
  TensorT dropout(Tape<T>& tape, const TensorT& x, bool train_mode);
  void check_tokens(const TokenMatrix& tokens, std::string_view what) const;

  ModelConfig config_;
  std::vector<NamedParameter<T>> params_;
  TensorT embedding_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  LayerNorm encoder_norm_;
  LayerNorm decoder_norm_;
  TensorT out_w_;
  TensorT out_b_;
  std::mt19937_64 dropout_rng_;
  std::uint64_t forward_count_ = 0;
};

using Seq2SeqModel = BasicSeq2Seq<float>;

// Frozen parameter values of a model at an epoch.
class Snapshot {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> values;
    bool operator==(const Entry&) const = default;
  };

  Snapshot(std::vector<Entry> entries, std::uint32_t epoch, double dev_loss)
      : entries_(std::move(entries)), epoch_(epoch), dev_loss_(dev_loss) {}

  const std::vector<Entry>& entries() const { return entries_; }
  std::uint32_t epoch() const { return epoch_; }
  double dev_loss() const { return dev_loss_; }

  bool operator==(const Snapshot&) const = default;

 private:
  std::vector<Entry> entries_;
  std::uint32_t epoch_;
  double dev_loss_;
};

using SnapshotPtr = std::shared_ptr<const Snapshot>;

// Throws NumericError on non-finite parameters.
SnapshotPtr snapshot(const Seq2SeqModel& model, std::uint32_t epoch, double dev_loss);
// Throws ShapeError naming the offending parameter.
void restore(Seq2SeqModel& model, const Snapshot& snap);

inline constexpr std::uint32_t kSnapshotFormatVersion = 1;

std::vector<std::uint8_t> encode_snapshot(const Snapshot& snap);
Snapshot decode_snapshot(std::span<const std::uint8_t> bytes);
void save_snapshot(const Snapshot& snap, const std::filesystem::path& path);
Snapshot load_snapshot(const std::filesystem::path& path);

// Argmax decoding with lowest-id tie-break; stops at end-of-sequence (not
// emitted) or after max_len tokens.
TokenSequence greedy_decode(Seq2SeqModel& model, std::span<const TokenId> src, std::size_t max_len);

}  // namespace lssd
