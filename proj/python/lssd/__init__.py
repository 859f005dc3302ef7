# Copyright 2026 The LSSD Lab Authors
# SPDX-License-Identifier: Apache-2.0
"""Language-specific self-distillation on synthetic multilingual translation."""

from lssd._lssd import (
    ConfigError,
    DataError,
    DubEntry,
    DubReport,
    EpochRecord,
    RunLog,
    compute_dub,
    corpus_bleu,
    default_config,
    normalize_config,
    read_run_log,
    sample_weight,
    temperature_probs,
    token_accuracy,
    train,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DubEntry",
    "DubReport",
    "EpochRecord",
    "RunLog",
    "compute_dub",
    "corpus_bleu",
    "default_config",
    "normalize_config",
    "read_run_log",
    "sample_weight",
    "temperature_probs",
    "token_accuracy",
    "train",
]
