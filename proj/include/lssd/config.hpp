// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration files:
//
//   # comment
//   [model]
//   embed_dim = 64
//   [data]
//   languages = lo:200:200:200:revperm:11, hi:8000:200:200:shift:3
//   [train]
//   mode = lssd_whole
//
// Unknown sections or keys are errors. Omitted keys keep their defaults,
// which describe the four-language imbalance profile.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lssd/data.hpp"
#include "lssd/model.hpp"
#include "lssd/train.hpp"

namespace lssd {

struct ExperimentConfig {
  // [model]; vocab_size is derived from the language count and payload_vocab.
  ModelConfig model;
  std::size_t payload_vocab = 32;
  // [data]
  std::vector<LanguageSpec> languages;
  std::size_t payload_len_min = 3;
  std::size_t payload_len_max = 8;
  std::uint64_t data_seed = 1;
  // [train]
  TrainConfig train;

  // Builds the language specs' transforms and the derived vocab size, then
  // validates everything. Throws ConfigError or DataError.
  void finalize();
};

ExperimentConfig default_experiment();
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical text form; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const ExperimentConfig& config);

MultilingualCorpus build_corpus(const ExperimentConfig& config);

}  // namespace lssd
