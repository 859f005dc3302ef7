// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace lssd {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;

// Right-padded row-major matrix of token ids.
struct TokenMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TokenId> ids;

  TokenMatrix() = default;
  TokenMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), ids(r * c, kPadId) {}

  TokenId at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
  TokenId& at(std::size_t r, std::size_t c) { return ids[r * cols + c]; }
  std::span<const TokenId> row(std::size_t r) const { return {ids.data() + r * cols, cols}; }

  static TokenMatrix from_rows(std::span<const TokenSequence> seqs) {
    std::size_t width = 0;
    for (const auto& s : seqs) width = std::max(width, s.size());
    TokenMatrix m(seqs.size(), width);
    for (std::size_t r = 0; r < seqs.size(); ++r) {
      for (std::size_t c = 0; c < seqs[r].size(); ++c) m.at(r, c) = seqs[r][c];
    }
    return m;
  }
};

}  // namespace lssd
