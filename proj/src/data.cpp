// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lssd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <utility>

namespace lssd {

namespace {

// Unbiased draw from [0, n).
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

// ---------------------------------------------------------------------------
// Transforms

std::vector<std::int32_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::int32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  if (seed == 0) return perm;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
  }
  return perm;
}

Transform Transform::permute(std::vector<std::int32_t> perm) {
  Transform t;
  t.kind = TransformKind::kPermutation;
  t.permutation = std::move(perm);
  return t;
}

Transform Transform::reverse_permute(std::vector<std::int32_t> perm) {
  Transform t;
  t.kind = TransformKind::kReversalPermutation;
  t.permutation = std::move(perm);
  return t;
}

Transform Transform::shift_by(std::int32_t k) {
  Transform t;
  t.kind = TransformKind::kShift;
  t.shift = k;
  return t;
}

Transform Transform::from_spec(const std::string& kind, std::int64_t param, std::size_t payload_vocab) {
  if (kind == "perm") return permute(seeded_permutation(payload_vocab, static_cast<std::uint64_t>(param)));
  if (kind == "revperm") {
    return reverse_permute(seeded_permutation(payload_vocab, static_cast<std::uint64_t>(param)));
  }
  if (kind == "shift") return shift_by(static_cast<std::int32_t>(param));
  throw DataError("unknown transform '" + kind + "' (expected perm, revperm or shift)");
}

void Transform::validate(std::size_t payload_vocab) const {
  if (kind == TransformKind::kShift) {
    if (shift < 0 || static_cast<std::size_t>(shift) >= payload_vocab) {
      throw DataError("shift " + std::to_string(shift) + " outside [0, " +
                      std::to_string(payload_vocab) + ")");
    }
    return;
  }
  if (permutation.size() != payload_vocab) {
    throw DataError("permutation covers " + std::to_string(permutation.size()) +
                    " tokens, payload vocabulary has " + std::to_string(payload_vocab));
  }
  std::vector<bool> seen(payload_vocab, false);
  for (auto p : permutation) {
    if (p < 0 || static_cast<std::size_t>(p) >= payload_vocab || seen[static_cast<std::size_t>(p)]) {
      throw DataError("permutation is not a bijection");
    }
    seen[static_cast<std::size_t>(p)] = true;
  }
}

std::vector<std::int32_t> Transform::apply(const std::vector<std::int32_t>& payload,
                                           std::size_t payload_vocab) const {
  std::vector<std::int32_t> out;
  out.reserve(payload.size());
  switch (kind) {
    case TransformKind::kShift:
      for (auto p : payload) {
        out.push_back(static_cast<std::int32_t>((p + shift) % static_cast<std::int32_t>(payload_vocab)));
      }
      break;
    case TransformKind::kPermutation:
      for (auto p : payload) out.push_back(permutation.at(static_cast<std::size_t>(p)));
      break;
    case TransformKind::kReversalPermutation:
      for (auto it = payload.rbegin(); it != payload.rend(); ++it) {
        out.push_back(permutation.at(static_cast<std::size_t>(*it)));
      }
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(const std::vector<std::string>& language_names, std::size_t payload_vocab) {
  surfaces_ = {"<pad>", "<s>", "</s>"};
  for (const auto& name : language_names) surfaces_.push_back("<2" + name + ">");
  tag_count_ = language_names.size();
  payload_offset_ = static_cast<TokenId>(surfaces_.size());
  for (std::size_t i = 0; i < payload_vocab; ++i) surfaces_.push_back("w" + std::to_string(i));
  index();
}

Vocabulary Vocabulary::from_surfaces(std::vector<std::string> surfaces) {
  Vocabulary v;
  if (surfaces.size() < 3 || surfaces[0] != "<pad>" || surfaces[1] != "<s>" || surfaces[2] != "</s>") {
    throw DataError("vocabulary must start with <pad>, <s>, </s>");
  }
  v.surfaces_ = std::move(surfaces);
  std::size_t i = 3;
  while (i < v.surfaces_.size() && v.surfaces_[i].rfind("<2", 0) == 0) ++i;
  v.tag_count_ = i - 3;
  v.payload_offset_ = static_cast<TokenId>(i);
  v.index();
  return v;
}

void Vocabulary::index() {
  ids_.clear();
  for (std::size_t i = 0; i < surfaces_.size(); ++i) {
    if (!ids_.emplace(surfaces_[i], static_cast<TokenId>(i)).second) {
      throw DataError("duplicate vocabulary entry " + surfaces_[i]);
    }
  }
}

TokenId Vocabulary::id(const std::string& surface) const {
  auto it = ids_.find(surface);
  if (it == ids_.end()) throw DataError("unknown token '" + surface + "'");
  return it->second;
}

TokenId Vocabulary::tag(std::size_t language) const {
  if (language >= tag_count_) throw DataError("no tag for language " + std::to_string(language));
  return static_cast<TokenId>(3 + language);
}

// ---------------------------------------------------------------------------
// Corpus

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "dev") return Split::kDev;
  if (name == "test") return Split::kTest;
  throw DataError("unknown split '" + name + "'");
}

const std::vector<SentencePair>& LanguageData::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kDev: return dev;
    case Split::kTest: return test;
  }
  return train;
}

std::vector<SentencePair>& LanguageData::split(Split s) {
  return const_cast<std::vector<SentencePair>&>(std::as_const(*this).split(s));
}

std::size_t MultilingualCorpus::language_index(const std::string& name) const {
  for (std::size_t i = 0; i < languages.size(); ++i) {
    if (languages[i].spec.name == name) return i;
  }
  throw DataError("unknown language '" + name + "'");
}

std::vector<std::size_t> MultilingualCorpus::train_sizes() const {
  std::vector<std::size_t> sizes;
  for (const auto& l : languages) sizes.push_back(l.train.size());
  return sizes;
}

std::size_t MultilingualCorpus::max_sequence_length() const {
  std::size_t longest = 0;
  for (const auto& l : languages) {
    for (auto s : {Split::kTrain, Split::kDev, Split::kTest}) {
      for (const auto& p : l.split(s)) longest = std::max({longest, p.src.size(), p.tgt.size()});
    }
  }
  return longest;
}

MultilingualCorpus generate_corpus(const std::vector<LanguageSpec>& specs,
                                   std::size_t payload_vocab_size, std::uint64_t seed) {
  if (specs.empty()) throw DataError("corpus needs at least one language");
  if (payload_vocab_size < 2) throw DataError("payload vocabulary needs at least two tokens");
  std::vector<std::string> names;
  for (const auto& s : specs) {
    if (s.name.empty()) throw DataError("language name must be non-empty");
    if (std::find(names.begin(), names.end(), s.name) != names.end()) {
      throw DataError("duplicate language name " + s.name);
    }
    if (s.train_size == 0 || s.dev_size == 0 || s.test_size == 0) {
      throw DataError("language " + s.name + " needs non-empty train, dev and test splits");
    }
    if (s.payload_min == 0 || s.payload_min > s.payload_max) {
      throw DataError("language " + s.name + " has an invalid payload length range");
    }
    s.transform.validate(payload_vocab_size);
    names.push_back(s.name);
  }

  MultilingualCorpus corpus;
  corpus.vocab = Vocabulary(names, payload_vocab_size);
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const auto& spec = specs[l];
    const std::size_t needed = spec.train_size + spec.dev_size + spec.test_size;
    // Distinct payloads available in the length range, saturating.
    double available = 0.0;
    for (std::size_t len = spec.payload_min; len <= spec.payload_max; ++len) {
      available += std::pow(static_cast<double>(payload_vocab_size), static_cast<double>(len));
    }
    if (available < static_cast<double>(needed)) {
      throw DataError("language " + spec.name + " asks for " + std::to_string(needed) +
                      " distinct sentences but only " + std::to_string(available) + " exist");
    }
    std::mt19937_64 rng(mix_seed(seed, l));
    std::set<std::vector<std::int32_t>> seen;
    LanguageData data;
    data.spec = spec;
    const TokenId tag = corpus.vocab.tag(l);
    // Consecutive distinct draws fill train, then dev, then test.
    while (seen.size() < needed) {
      const std::size_t len =
          spec.payload_min + uniform_index(rng, spec.payload_max - spec.payload_min + 1);
      std::vector<std::int32_t> payload(len);
      for (auto& p : payload) p = static_cast<std::int32_t>(uniform_index(rng, payload_vocab_size));
      if (!seen.insert(payload).second) continue;
      SentencePair pair;
      pair.src.push_back(tag);
      for (auto p : payload) pair.src.push_back(corpus.vocab.payload_token(p));
      pair.src.push_back(kEosId);
      for (auto p : spec.transform.apply(payload, payload_vocab_size)) {
        pair.tgt.push_back(corpus.vocab.payload_token(p));
      }
      pair.tgt.push_back(kEosId);
      const std::size_t k = seen.size();
      if (k <= spec.train_size) {
        data.train.push_back(std::move(pair));
      } else if (k <= spec.train_size + spec.dev_size) {
        data.dev.push_back(std::move(pair));
      } else {
        data.test.push_back(std::move(pair));
      }
    }
    corpus.languages.push_back(std::move(data));
  }
  return corpus;
}

std::vector<double> temperature_probs(const std::vector<std::size_t>& sizes, double tau) {
  if (sizes.empty()) throw std::invalid_argument("temperature sampling needs at least one size");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("temperature must be positive");
  double total = 0.0;
  for (auto n : sizes) {
    if (n == 0) throw std::invalid_argument("temperature sampling sizes must be positive");
    total += static_cast<double>(n);
  }
  std::vector<double> p(sizes.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::pow(static_cast<double>(sizes[i]) / total, 1.0 / tau);
    z += p[i];
  }
  if (std::any_of(p.begin(), p.end(), [](double x) { return !(x > 0.0); })) {
    // Underflow at small tau: normalize in log space against the largest share.
    std::vector<double> logits(sizes.size());
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      logits[i] = std::log(static_cast<double>(sizes[i]) / total) / tau;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = std::exp(logits[i] - mx);
      z += p[i];
    }
  }
  for (auto& x : p) x /= z;
  return p;
}

std::size_t sample_language(const std::vector<double>& probs, std::mt19937_64& rng) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = i;
    cumulative += probs[i];
    if (u < cumulative) return i;
  }
  return last_positive;
}

std::size_t Batch::token_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

Batch make_batch(const MultilingualCorpus& corpus, std::size_t lang, Split split,
                 const std::vector<std::size_t>& indices) {
  if (lang >= corpus.languages.size()) throw DataError("language index out of range");
  const auto& pairs = corpus.languages[lang].split(split);
  std::vector<TokenSequence> src;
  std::vector<TokenSequence> tgt;
  for (auto i : indices) {
    if (i >= pairs.size()) {
      throw DataError("sentence index " + std::to_string(i) + " outside " + split_name(split) +
                      " split of " + std::to_string(pairs.size()));
    }
    src.push_back(pairs[i].src);
    tgt.push_back(pairs[i].tgt);
  }
  Batch b;
  b.src = TokenMatrix::from_rows(src);
  b.tgt = TokenMatrix::from_rows(tgt);
  b.mask.assign(b.tgt.rows * b.tgt.cols, 0);
  for (std::size_t r = 0; r < tgt.size(); ++r) {
    for (std::size_t c = 0; c < tgt[r].size(); ++c) b.mask[r * b.tgt.cols + c] = 1;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Text export

namespace {

std::string join_surfaces(const Vocabulary& vocab, const TokenSequence& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += vocab.surface(seq[i]);
  }
  return out;
}

TokenSequence parse_surfaces(const Vocabulary& vocab, const std::string& text) {
  TokenSequence seq;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) seq.push_back(vocab.id(tok));
  return seq;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    fields.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return fields;
}

}  // namespace

void export_corpus(const MultilingualCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "vocab.tsv");
    for (std::size_t i = 0; i < corpus.vocab.size(); ++i) {
      out << i << '\t' << corpus.vocab.surface(static_cast<TokenId>(i)) << '\n';
    }
  }
  {
    std::ofstream out(dir / "languages.tsv");
    for (const auto& l : corpus.languages) {
      out << l.spec.name << '\t' << l.spec.transform_name << '\t' << l.spec.transform_param << '\t'
          << l.spec.payload_min << '\t' << l.spec.payload_max << '\n';
    }
  }
  for (const auto& l : corpus.languages) {
    for (auto s : {Split::kTrain, Split::kDev, Split::kTest}) {
      std::ofstream out(dir / (l.spec.name + "." + split_name(s) + ".tsv"));
      for (const auto& p : l.split(s)) {
        out << join_surfaces(corpus.vocab, p.src) << '\t' << join_surfaces(corpus.vocab, p.tgt) << '\n';
      }
    }
  }
}

MultilingualCorpus import_corpus(const std::filesystem::path& dir) {
  MultilingualCorpus corpus;
  std::vector<std::string> surfaces;
  for (const auto& line : read_lines(dir / "vocab.tsv")) {
    const auto f = split_tabs(line);
    if (f.size() != 2 || std::stoul(f[0]) != surfaces.size()) {
      throw DataError("malformed vocab.tsv line: " + line);
    }
    surfaces.push_back(f[1]);
  }
  corpus.vocab = Vocabulary::from_surfaces(std::move(surfaces));
  const std::size_t payload_vocab = corpus.vocab.payload_vocab();
  for (const auto& line : read_lines(dir / "languages.tsv")) {
    const auto f = split_tabs(line);
    if (f.size() != 5) throw DataError("malformed languages.tsv line: " + line);
    LanguageData data;
    data.spec.name = f[0];
    data.spec.transform_name = f[1];
    data.spec.transform_param = std::stoll(f[2]);
    data.spec.payload_min = std::stoul(f[3]);
    data.spec.payload_max = std::stoul(f[4]);
    data.spec.transform = Transform::from_spec(f[1], data.spec.transform_param, payload_vocab);
    data.spec.transform.validate(payload_vocab);
    const TokenId tag = corpus.vocab.tag(corpus.languages.size());
    for (auto s : {Split::kTrain, Split::kDev, Split::kTest}) {
      auto& pairs = data.split(s);
      for (const auto& pline : read_lines(dir / (data.spec.name + "." + split_name(s) + ".tsv"))) {
        const auto f2 = split_tabs(pline);
        if (f2.size() != 2) throw DataError("malformed pair line: " + pline);
        SentencePair p{parse_surfaces(corpus.vocab, f2[0]), parse_surfaces(corpus.vocab, f2[1])};
        if (p.src.size() < 2 || p.src.front() != tag || p.src.back() != kEosId ||
            p.tgt.empty() || p.tgt.back() != kEosId) {
          throw DataError("pair in " + data.spec.name + " lacks its tag or end marker");
        }
        std::vector<std::int32_t> payload;
        for (std::size_t i = 1; i + 1 < p.src.size(); ++i) {
          const auto idx = corpus.vocab.payload_index(p.src[i]);
          if (idx < 0 || static_cast<std::size_t>(idx) >= payload_vocab) {
            throw DataError("non-payload token inside a source sentence of " + data.spec.name);
          }
          payload.push_back(idx);
        }
        std::vector<std::int32_t> expected = data.spec.transform.apply(payload, payload_vocab);
        TokenSequence expected_tgt;
        for (auto e : expected) expected_tgt.push_back(corpus.vocab.payload_token(e));
        expected_tgt.push_back(kEosId);
        if (expected_tgt != p.tgt) {
          throw DataError("pair in " + data.spec.name + " violates its transform");
        }
        pairs.push_back(std::move(p));
      }
    }
    data.spec.train_size = data.train.size();
    data.spec.dev_size = data.dev.size();
    data.spec.test_size = data.test.size();
    corpus.languages.push_back(std::move(data));
  }
  if (corpus.languages.empty()) throw DataError("corpus directory lists no languages");
  return corpus;
}

}  // namespace lssd
