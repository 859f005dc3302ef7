// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lssd/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace lssd {

namespace {

constexpr double kMaskValue = -1e9;
constexpr double kNormEps = 1e-5;

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size == 0) throw ConfigError("model vocab_size must be positive");
  if (embed_dim == 0 || hidden_dim == 0 || num_layers == 0 || num_heads == 0 || max_seq_len == 0) {
    throw ConfigError("model dimensions, layers, heads and max_seq_len must be positive");
  }
  if (embed_dim % num_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
                      std::to_string(num_heads) + " heads");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

// ---------------------------------------------------------------------------
// Construction

template <std::floating_point T>
BasicSeq2Seq<T>::BasicSeq2Seq(const ModelConfig& config, std::uint64_t seed)
    : config_(config), dropout_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config_.embed_dim;
  const std::size_t v = config_.vocab_size;
  embedding_ = add_param("embed.tokens", {v, d}, rng, 'x');
  for (std::size_t i = 0; i < config_.num_layers; ++i) {
    const std::string p = "encoder." + std::to_string(i) + ".";
    EncoderLayer layer;
    layer.norm_attn = make_norm(p + "norm_attn", rng);
    layer.self_attn = make_attention(p + "self_attn", rng);
    layer.norm_ffn = make_norm(p + "norm_ffn", rng);
    layer.ffn = make_ffn(p + "ffn", rng);
    encoder_.push_back(std::move(layer));
  }
  encoder_norm_ = make_norm("encoder.norm", rng);
  for (std::size_t i = 0; i < config_.num_layers; ++i) {
    const std::string p = "decoder." + std::to_string(i) + ".";
    DecoderLayer layer;
    layer.norm_self = make_norm(p + "norm_self", rng);
    layer.self_attn = make_attention(p + "self_attn", rng);
    layer.norm_cross = make_norm(p + "norm_cross", rng);
    layer.cross_attn = make_attention(p + "cross_attn", rng);
    layer.norm_ffn = make_norm(p + "norm_ffn", rng);
    layer.ffn = make_ffn(p + "ffn", rng);
    decoder_.push_back(std::move(layer));
  }
  decoder_norm_ = make_norm("decoder.norm", rng);
  out_w_ = add_param("output.weight", {d, v}, rng, 'x');
  out_b_ = add_param("output.bias", {v}, rng, 'z');
}

template <std::floating_point T>
BasicTensor<T>& BasicSeq2Seq<T>::add_param(std::string name, Shape shape, std::mt19937_64& rng,
                                           char init) {
  const std::size_t n = shape_numel(shape);
  std::vector<T> values(n, T(0));
  if (init == 'x') {
    const double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
    for (auto& x : values) x = static_cast<T>(bound * (2.0 * uniform01(rng) - 1.0));
  } else if (init == 'o') {
    std::fill(values.begin(), values.end(), T(1));
  }
  params_.push_back({std::move(name), TensorT(std::move(shape), std::move(values), true)});
  return params_.back().tensor;
}

template <std::floating_point T>
typename BasicSeq2Seq<T>::Attention BasicSeq2Seq<T>::make_attention(const std::string& prefix,
                                                                    std::mt19937_64& rng) {
  const std::size_t d = config_.embed_dim;
  Attention a;
  a.wq = add_param(prefix + ".wq", {d, d}, rng, 'x');
  a.bq = add_param(prefix + ".bq", {d}, rng, 'z');
  a.wk = add_param(prefix + ".wk", {d, d}, rng, 'x');
  a.wv = add_param(prefix + ".wv", {d, d}, rng, 'x');
  a.bv = add_param(prefix + ".bv", {d}, rng, 'z');
  a.wo = add_param(prefix + ".wo", {d, d}, rng, 'x');
  a.bo = add_param(prefix + ".bo", {d}, rng, 'z');
  return a;
}

template <std::floating_point T>
typename BasicSeq2Seq<T>::LayerNorm BasicSeq2Seq<T>::make_norm(const std::string& prefix,
                                                               std::mt19937_64& rng) {
  const std::size_t d = config_.embed_dim;
  LayerNorm n;
  n.gain = add_param(prefix + ".gain", {d}, rng, 'o');
  n.bias = add_param(prefix + ".bias", {d}, rng, 'z');
  return n;
}

template <std::floating_point T>
typename BasicSeq2Seq<T>::FeedForward BasicSeq2Seq<T>::make_ffn(const std::string& prefix,
                                                                std::mt19937_64& rng) {
  const std::size_t d = config_.embed_dim;
  const std::size_t h = config_.hidden_dim;
  FeedForward f;
  f.w1 = add_param(prefix + ".w1", {d, h}, rng, 'x');
  f.b1 = add_param(prefix + ".b1", {h}, rng, 'z');
  f.w2 = add_param(prefix + ".w2", {h, d}, rng, 'x');
  f.b2 = add_param(prefix + ".b2", {d}, rng, 'z');
  return f;
}

template <std::floating_point T>
BasicTensor<T>& BasicSeq2Seq<T>::parameter(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

template <std::floating_point T>
std::size_t BasicSeq2Seq<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

template <std::floating_point T>
void BasicSeq2Seq<T>::set_requires_grad(bool on) {
  for (auto& p : params_) p.tensor.set_requires_grad(on);
}

template <std::floating_point T>
void BasicSeq2Seq<T>::clear_grads() {
  for (auto& p : params_) p.tensor.clear_grad();
}

template <std::floating_point T>
BasicSeq2Seq<T> BasicSeq2Seq<T>::clone() const {
  return cast<T>();
}

template <std::floating_point T>
template <std::floating_point U>
BasicSeq2Seq<U> BasicSeq2Seq<T>::cast() const {
  BasicSeq2Seq<U> out(config_, 0);
  auto& dst = out.parameters();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto src = params_[i].tensor.values();
    auto values = dst[i].tensor.mutable_values();
    for (std::size_t j = 0; j < src.size(); ++j) values[j] = static_cast<U>(src[j]);
    dst[i].tensor.set_requires_grad(params_[i].tensor.requires_grad());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward

template <std::floating_point T>
void BasicSeq2Seq<T>::check_tokens(const TokenMatrix& tokens, std::string_view what) const {
  if (tokens.rows == 0 || tokens.cols == 0) {
    throw ShapeError(std::string(what) + " batch is empty");
  }
  if (tokens.cols > config_.max_seq_len) {
    throw ShapeError(std::string(what) + " length " + std::to_string(tokens.cols) +
                     " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  for (TokenId id : tokens.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw ShapeError(std::string(what) + " token id " + std::to_string(id) +
                       " outside vocabulary of " + std::to_string(config_.vocab_size));
    }
  }
}

template <std::floating_point T>
BasicTensor<T> BasicSeq2Seq<T>::linear(Tape<T>& tape, const TensorT& x, const TensorT& w,
                                       const TensorT& b) {
  return ops::add(tape, ops::matmul(tape, x, w), b);
}

template <std::floating_point T>
BasicTensor<T> BasicSeq2Seq<T>::dropout(Tape<T>& tape, const TensorT& x, bool train_mode) {
  if (!train_mode || config_.dropout <= 0.0) return x;
  const double keep = 1.0 - config_.dropout;
  std::vector<T> mask(x.size());
  for (auto& m : mask) m = uniform01(dropout_rng_) < keep ? static_cast<T>(1.0 / keep) : T(0);
  return ops::mul(tape, x, TensorT(x.shape(), std::move(mask)));
}

template <std::floating_point T>
BasicTensor<T> BasicSeq2Seq<T>::embed(Tape<T>& tape, const TokenMatrix& tokens, bool train_mode) {
  const std::size_t d = config_.embed_dim;
  const std::size_t len = tokens.cols;
  std::vector<T> pe(len * d);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe[pos * d + i] = static_cast<T>(std::sin(angle));
      if (i + 1 < d) pe[pos * d + i + 1] = static_cast<T>(std::cos(angle));
    }
  }
  auto rows = ops::gather_rows(tape, embedding_, std::span<const TokenId>(tokens.ids));
  auto x = ops::reshape(tape, rows, {tokens.rows, len, d});
  x = ops::scale(tape, x, static_cast<T>(std::sqrt(static_cast<double>(d))));
  x = ops::add(tape, x, TensorT({len, d}, std::move(pe)));
  return dropout(tape, x, train_mode);
}

template <std::floating_point T>
BasicTensor<T> BasicSeq2Seq<T>::layer_norm(Tape<T>& tape, const LayerNorm& p, const TensorT& x) {
  auto mu = ops::mean_last(tape, x);
  auto centered = ops::sub(tape, x, mu);
  auto var = ops::mean_last(tape, ops::mul(tape, centered, centered));
  // (var + eps)^-1/2 through exp/log
  auto inv_std = ops::exp(tape, ops::scale(tape, ops::log(tape, ops::add_scalar(tape, var, static_cast<T>(kNormEps))), T(-0.5)));
  auto y = ops::mul(tape, centered, inv_std);
  return ops::add(tape, ops::mul(tape, y, p.gain), p.bias);
}

template <std::floating_point T>
BasicTensor<T> BasicSeq2Seq<T>::feed_forward(Tape<T>& tape, const FeedForward& p,
                                             const TensorT& x) {
  auto h = linear(tape, x, p.w1, p.b1);
  // tanh-approximated GELU
  const T c = static_cast<T>(std::sqrt(2.0 / M_PI));
  auto cube = ops::mul(tape, ops::mul(tape, h, h), h);
  auto inner = ops::add(tape, h, ops::scale(tape, cube, static_cast<T>(0.044715)));
  auto t = ops::tanh(tape, ops::scale(tape, inner, c));
  auto act = ops::mul(tape, ops::scale(tape, h, T(0.5)), ops::add_scalar(tape, t, T(1)));
  return linear(tape, act, p.w2, p.b2);
}

template <std::floating_point T>
BasicTensor<T> BasicSeq2Seq<T>::attention(Tape<T>& tape, const Attention& p, const TensorT& query,
                                          const TensorT& memory, const TensorT& mask) {
  const std::size_t batch = query.dim(0);
  const std::size_t tq = query.dim(1);
  const std::size_t tk = memory.dim(1);
  const std::size_t heads = config_.num_heads;
  const std::size_t dh = config_.embed_dim / heads;
  auto split = [&](const TensorT& x, std::size_t len) {
    return ops::transpose(tape, ops::reshape(tape, x, {batch, len, heads, dh}), 1, 2);
  };
  auto q = split(linear(tape, query, p.wq, p.bq), tq);
  // Keys carry no bias: a shared key offset cancels in the softmax.
  auto k = split(ops::matmul(tape, memory, p.wk), tk);
  auto v = split(linear(tape, memory, p.wv, p.bv), tk);
  auto scores = ops::matmul(tape, q, k, true);
  scores = ops::scale(tape, scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  scores = ops::add(tape, scores, mask);
  auto weights = ops::softmax(tape, scores);
  auto context = ops::matmul(tape, weights, v);
  context = ops::reshape(tape, ops::transpose(tape, context, 1, 2), {batch, tq, config_.embed_dim});
  return linear(tape, context, p.wo, p.bo);
}

namespace {

// Additive key-padding mask [B, 1, 1, S].
template <std::floating_point T>
BasicTensor<T> padding_mask(const TokenMatrix& keys) {
  std::vector<T> m(keys.rows * keys.cols, T(0));
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (keys.ids[i] == kPadId) m[i] = static_cast<T>(kMaskValue);
  }
  return BasicTensor<T>({keys.rows, 1, 1, keys.cols}, std::move(m));
}

// Causal plus key-padding mask [B, 1, T, T]. Position 0 holds the begin
// marker, so no row is fully masked.
template <std::floating_point T>
BasicTensor<T> causal_mask(const TokenMatrix& dec_in) {
  const std::size_t b = dec_in.rows;
  const std::size_t t = dec_in.cols;
  std::vector<T> m(b * t * t, T(0));
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < t; ++j) {
        if (j > i || dec_in.at(r, j) == kPadId) m[(r * t + i) * t + j] = static_cast<T>(kMaskValue);
      }
    }
  }
  return BasicTensor<T>({b, 1, t, t}, std::move(m));
}

}  // namespace

template <std::floating_point T>
BasicTensor<T> BasicSeq2Seq<T>::encode(Tape<T>& tape, const TokenMatrix& src, bool train_mode) {
  check_tokens(src, "source");
  const auto mask = padding_mask<T>(src);
  auto x = embed(tape, src, train_mode);
  for (const auto& layer : encoder_) {
    auto h = layer_norm(tape, layer.norm_attn, x);
    x = ops::add(tape, x, dropout(tape, attention(tape, layer.self_attn, h, h, mask), train_mode));
    h = layer_norm(tape, layer.norm_ffn, x);
    x = ops::add(tape, x, dropout(tape, feed_forward(tape, layer.ffn, h), train_mode));
  }
  return layer_norm(tape, encoder_norm_, x);
}

template <std::floating_point T>
BasicTensor<T> BasicSeq2Seq<T>::decode(Tape<T>& tape, const TensorT& memory, const TokenMatrix& src,
                                       const TokenMatrix& decoder_input, bool train_mode) {
  check_tokens(decoder_input, "decoder input");
  if (decoder_input.rows != src.rows) {
    throw ShapeError("decoder batch of " + std::to_string(decoder_input.rows) +
                     " rows against source batch of " + std::to_string(src.rows));
  }
  const auto self_mask = causal_mask<T>(decoder_input);
  const auto cross_mask = padding_mask<T>(src);
  auto x = embed(tape, decoder_input, train_mode);
  for (const auto& layer : decoder_) {
    auto h = layer_norm(tape, layer.norm_self, x);
    x = ops::add(tape, x, dropout(tape, attention(tape, layer.self_attn, h, h, self_mask), train_mode));
    h = layer_norm(tape, layer.norm_cross, x);
    x = ops::add(tape, x,
                 dropout(tape, attention(tape, layer.cross_attn, h, memory, cross_mask), train_mode));
    h = layer_norm(tape, layer.norm_ffn, x);
    x = ops::add(tape, x, dropout(tape, feed_forward(tape, layer.ffn, h), train_mode));
  }
  auto logits = linear(tape, layer_norm(tape, decoder_norm_, x), out_w_, out_b_);
  return ops::softmax(tape, logits);
}

template <std::floating_point T>
BasicTensor<T> BasicSeq2Seq<T>::forward(Tape<T>& tape, const TokenMatrix& src, const TokenMatrix& tgt,
                                        bool train_mode) {
  ++forward_count_;
  check_tokens(tgt, "target");
  TokenMatrix dec_in(tgt.rows, tgt.cols);
  for (std::size_t r = 0; r < tgt.rows; ++r) {
    dec_in.at(r, 0) = kBosId;
    for (std::size_t c = 1; c < tgt.cols; ++c) dec_in.at(r, c) = tgt.at(r, c - 1);
  }
  auto memory = encode(tape, src, train_mode);
  return decode(tape, memory, src, dec_in, train_mode);
}

template class BasicSeq2Seq<float>;
template class BasicSeq2Seq<double>;
template BasicSeq2Seq<double> BasicSeq2Seq<float>::cast<double>() const;
template BasicSeq2Seq<float> BasicSeq2Seq<double>::cast<float>() const;

// ---------------------------------------------------------------------------
// Snapshots

SnapshotPtr snapshot(const Seq2SeqModel& model, std::uint32_t epoch, double dev_loss) {
  std::vector<Snapshot::Entry> entries;
  entries.reserve(model.parameters().size());
  for (const auto& p : model.parameters()) {
    if (!p.tensor.all_finite()) throw NumericError("non-finite values in parameter " + p.name);
    const auto v = p.tensor.values();
    entries.push_back({p.name, p.tensor.shape(), std::vector<float>(v.begin(), v.end())});
  }
  return std::make_shared<const Snapshot>(std::move(entries), epoch, dev_loss);
}

void restore(Seq2SeqModel& model, const Snapshot& snap) {
  auto& params = model.parameters();
  if (params.size() != snap.entries().size()) {
    throw ShapeError("snapshot holds " + std::to_string(snap.entries().size()) +
                     " parameters, model has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = snap.entries()[i];
    if (e.name != params[i].name || e.shape != params[i].tensor.shape()) {
      throw ShapeError("snapshot parameter " + e.name + " " + shape_str(e.shape) +
                       " does not match model parameter " + params[i].name + " " +
                       shape_str(params[i].tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& src = snap.entries()[i].values;
    std::copy(src.begin(), src.end(), params[i].tensor.mutable_values().begin());
  }
}

namespace {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(le(4))); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw std::runtime_error("truncated snapshot");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_snapshot(const Snapshot& snap) {
  ByteWriter w;
  w.bytes("LSSD");
  w.u32(kSnapshotFormatVersion);
  w.u32(snap.epoch());
  w.f64(snap.dev_loss());
  w.u32(static_cast<std::uint32_t>(snap.entries().size()));
  for (const auto& e : snap.entries()) {
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name);
    w.u8(static_cast<std::uint8_t>(e.shape.size()));
    for (auto extent : e.shape) w.u32(static_cast<std::uint32_t>(extent));
    for (float v : e.values) w.f32(v);
  }
  return w.take();
}

Snapshot decode_snapshot(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.bytes(4) != "LSSD") throw std::runtime_error("not a snapshot file (bad magic)");
  const auto version = r.u32();
  if (version != kSnapshotFormatVersion) {
    throw std::runtime_error("unsupported snapshot format version " + std::to_string(version));
  }
  const auto epoch = r.u32();
  const double dev_loss = r.f64();
  const auto count = r.u32();
  std::vector<Snapshot::Entry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Snapshot::Entry e;
    e.name = r.bytes(r.u16());
    const auto rank = r.u8();
    for (std::uint8_t d = 0; d < rank; ++d) e.shape.push_back(r.u32());
    e.values.resize(shape_numel(e.shape));
    for (auto& v : e.values) v = r.f32();
    entries.push_back(std::move(e));
  }
  if (!r.done()) throw std::runtime_error("trailing bytes after snapshot payload");
  return Snapshot(std::move(entries), epoch, dev_loss);
}

void save_snapshot(const Snapshot& snap, const std::filesystem::path& path) {
  const auto bytes = encode_snapshot(snap);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Snapshot load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_snapshot(bytes);
}

// ---------------------------------------------------------------------------
// Decoding

TokenSequence greedy_decode(Seq2SeqModel& model, std::span<const TokenId> src, std::size_t max_len) {
  TokenSequence out;
  if (max_len == 0) return out;
  TokenMatrix src_m(1, src.size());
  std::copy(src.begin(), src.end(), src_m.ids.begin());
  Tape<float> tape(false);
  const auto memory = model.encode(tape, src_m, false);
  const std::size_t vocab = model.config().vocab_size;
  const std::size_t limit = std::min(max_len, model.config().max_seq_len);
  while (out.size() < limit) {
    TokenMatrix dec_in(1, out.size() + 1);
    dec_in.at(0, 0) = kBosId;
    for (std::size_t i = 0; i < out.size(); ++i) dec_in.at(0, i + 1) = out[i];
    const auto dists = model.decode(tape, memory, src_m, dec_in, false);
    const float* row = dists.values().data() + out.size() * vocab;
    std::size_t best = 0;
    for (std::size_t w = 1; w < vocab; ++w) {
      if (row[w] > row[best]) best = w;
    }
    if (static_cast<TokenId>(best) == kEosId) break;
    out.push_back(static_cast<TokenId>(best));
  }
  return out;
}

}  // namespace lssd
