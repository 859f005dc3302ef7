// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multilingual parallel corpora. Each "language pair" is a bijective
// token transform over a shared payload vocabulary; the source carries a
// leading tag token naming the pair.

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "lssd/tokens.hpp"

namespace lssd {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TransformKind { kPermutation, kReversalPermutation, kShift };

// Maps payload indices (0-based, payload-local) to target payload indices.
struct Transform {
  TransformKind kind = TransformKind::kShift;
  std::vector<std::int32_t> permutation;  // kPermutation / kReversalPermutation
  std::int32_t shift = 0;                 // kShift

  static Transform permute(std::vector<std::int32_t> perm);
  static Transform reverse_permute(std::vector<std::int32_t> perm);
  static Transform shift_by(std::int32_t k);
  // Parses "perm:<seed>", "revperm:<seed>", "shift:<k>"-style pairs; seed 0
  // means the identity permutation.
  static Transform from_spec(const std::string& kind, std::int64_t param, std::size_t payload_vocab);

  // Throws DataError when the transform is not a bijection on [0, payload_vocab).
  void validate(std::size_t payload_vocab) const;
  std::vector<std::int32_t> apply(const std::vector<std::int32_t>& payload,
                                  std::size_t payload_vocab) const;
};

std::vector<std::int32_t> seeded_permutation(std::size_t n, std::uint64_t seed);

struct LanguageSpec {
  std::string name;
  std::size_t train_size = 0;
  std::size_t dev_size = 0;
  std::size_t test_size = 0;
  Transform transform;
  std::string transform_name = "shift";
  std::int64_t transform_param = 0;
  std::size_t payload_min = 3;
  std::size_t payload_max = 8;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(const std::vector<std::string>& language_names, std::size_t payload_vocab);
  static Vocabulary from_surfaces(std::vector<std::string> surfaces);

  std::size_t size() const { return surfaces_.size(); }
  const std::string& surface(TokenId id) const { return surfaces_.at(static_cast<std::size_t>(id)); }
  TokenId id(const std::string& surface) const;
  const std::vector<std::string>& surfaces() const { return surfaces_; }

  TokenId tag(std::size_t language) const;
  TokenId payload_token(std::int32_t payload_index) const { return payload_offset_ + payload_index; }
  std::int32_t payload_index(TokenId id) const { return id - payload_offset_; }
  std::size_t payload_vocab() const { return size() - static_cast<std::size_t>(payload_offset_); }

  bool operator==(const Vocabulary& other) const { return surfaces_ == other.surfaces_; }

 private:
  void index();
  std::vector<std::string> surfaces_;
  std::unordered_map<std::string, TokenId> ids_;
  TokenId payload_offset_ = 3;
  std::size_t tag_count_ = 0;
};

enum class Split { kTrain, kDev, kTest };
const char* split_name(Split split);
Split parse_split(const std::string& name);

struct SentencePair {
  TokenSequence src;  // tag, payload..., end marker
  TokenSequence tgt;  // transformed payload..., end marker
  bool operator==(const SentencePair&) const = default;
};

struct LanguageData {
  LanguageSpec spec;
  std::vector<SentencePair> train;
  std::vector<SentencePair> dev;
  std::vector<SentencePair> test;

  const std::vector<SentencePair>& split(Split s) const;
  std::vector<SentencePair>& split(Split s);
};

struct MultilingualCorpus {
  Vocabulary vocab;
  std::vector<LanguageData> languages;

  std::size_t language_index(const std::string& name) const;
  std::vector<std::size_t> train_sizes() const;
  // Longest source or target sequence (tag and end marker included).
  std::size_t max_sequence_length() const;
};

// Fully determined by its inputs. Throws DataError on invalid specs.
MultilingualCorpus generate_corpus(const std::vector<LanguageSpec>& specs,
                                   std::size_t payload_vocab_size, std::uint64_t seed);

// p_l proportional to (n_l / sum n)^(1/tau).
std::vector<double> temperature_probs(const std::vector<std::size_t>& sizes, double tau);

// Categorical draw from `probs`.
std::size_t sample_language(const std::vector<double>& probs, std::mt19937_64& rng);

struct Batch {
  TokenMatrix src;
  TokenMatrix tgt;
  std::vector<std::uint8_t> mask;  // tgt.rows x tgt.cols, 1 on real tokens
  std::size_t token_count() const;
};

Batch make_batch(const MultilingualCorpus& corpus, std::size_t lang, Split split,
                 const std::vector<std::size_t>& indices);

// Text export: vocab.tsv, languages.tsv and <language>.<split>.tsv files.
void export_corpus(const MultilingualCorpus& corpus, const std::filesystem::path& dir);
MultilingualCorpus import_corpus(const std::filesystem::path& dir);

}  // namespace lssd
