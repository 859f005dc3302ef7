// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end:
//
//   lssd gen-data --config exp.ini --out data/
//   lssd train    --config exp.ini --data data/ --out runs/base
//   lssd eval     --run runs/base --data data/ --checkpoint lang:lo --split test
//   lssd analyze  --run runs/base
//   lssd compare  --runs runs/base runs/lssd
//
// Exit status: 0 success, 1 usage error, 2 data or validation error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lssd/analysis.hpp"
#include "lssd/config.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw lssd::DataError("cannot write " + path.string());
  out << text;
}

lssd::ExperimentConfig run_config(const fs::path& run) {
  return lssd::load_config(run / "config.ini");
}

fs::path checkpoint_path(const fs::path& run, const std::string& which) {
  if (which == "overall") return run / "checkpoints" / "overall_best.lssd";
  if (which == "final") return run / "final.lssd";
  if (which.rfind("lang:", 0) == 0 && which.size() > 5) {
    return run / "checkpoints" / ("best_" + which.substr(5) + ".lssd");
  }
  throw CLI::ValidationError("--checkpoint", "expected overall, final or lang:<name>");
}

lssd::EvalReport evaluate_checkpoint(const fs::path& run, const lssd::MultilingualCorpus& corpus,
                                     const std::string& which, lssd::Split split) {
  const auto config = run_config(run);
  if (config.model.vocab_size != corpus.vocab.size()) {
    throw lssd::DataError("corpus vocabulary does not match the run's model");
  }
  const fs::path path = checkpoint_path(run, which);
  if (!fs::exists(path)) throw lssd::DataError("no checkpoint at " + path.string());
  const lssd::Snapshot snap = lssd::load_snapshot(path);
  lssd::Seq2SeqModel model(config.model, config.train.seed);
  lssd::restore(model, snap);
  return lssd::evaluate(model, corpus, split, which, snap.epoch());
}

void print_eval_table(const lssd::EvalReport& report) {
  std::printf("checkpoint %s (epoch %u), split %s\n", report.checkpoint.c_str(),
              report.checkpoint_epoch, report.split.c_str());
  std::printf("%-12s %9s %8s %8s %7s\n", "language", "sentences", "tok_acc", "bleu", "nll");
  for (const auto& l : report.languages) {
    std::printf("%-12s %9zu %8.4f %8.2f %7.4f\n", l.language.c_str(), l.sentences, l.token_accuracy,
                l.bleu, l.nll);
  }
}

int cmd_gen_data(const std::string& config_path, const fs::path& out) {
  const auto config = lssd::load_config(config_path);
  const auto corpus = lssd::build_corpus(config);
  lssd::export_corpus(corpus, out);
  std::printf("wrote %zu languages, vocabulary of %zu tokens, to %s\n", corpus.languages.size(),
              corpus.vocab.size(), out.string().c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const fs::path& data, const fs::path& out) {
  const auto config = lssd::load_config(config_path);
  const auto corpus = lssd::import_corpus(data);
  if (corpus.vocab.size() != config.model.vocab_size) {
    throw lssd::DataError("corpus vocabulary size " + std::to_string(corpus.vocab.size()) +
                          " does not match the config's " + std::to_string(config.model.vocab_size));
  }
  const auto result = lssd::run_training(corpus, config.model, config.train);
  lssd::write_run_directory(result, out, lssd::to_ini(config));
  const auto report = lssd::compute_dub(result.log);
  std::printf("trained %zu epochs; overall best epoch %u, avg dev loss %s, total DUB %s\n",
              result.log.epochs.size(), report.overall_best_epoch,
              lssd::format_real(report.overall_best_avg_dev_loss).c_str(),
              lssd::format_real(report.total_dub).c_str());
  return 0;
}

int cmd_eval(const fs::path& run, const fs::path& data, const std::string& which,
             const std::string& split_name) {
  const lssd::Split split = lssd::parse_split(split_name);
  const auto corpus = lssd::import_corpus(data);
  const auto report = evaluate_checkpoint(run, corpus, which, split);
  std::string tag = which;
  for (char& c : tag) {
    if (c == ':') c = '_';
  }
  write_text(run / ("eval_" + tag + "_" + split_name + ".txt"), lssd::format_eval_report(report));
  print_eval_table(report);
  return 0;
}

int cmd_analyze(const fs::path& run) {
  const auto report = lssd::compute_dub(lssd::read_run_log(run));
  const std::string text = lssd::format_dub_report(report);
  write_text(run / "dub_report.txt", text);
  std::fputs(text.c_str(), stdout);
  return 0;
}

int cmd_compare(const std::vector<fs::path>& runs, const std::optional<fs::path>& data) {
  struct Row {
    std::string name;
    lssd::DubReport dub;
    lssd::EvalReport eval;
  };
  std::vector<Row> rows;
  for (const auto& run : runs) {
    const auto corpus = data ? lssd::import_corpus(*data) : lssd::build_corpus(run_config(run));
    rows.push_back({run.filename().string(), lssd::compute_dub(lssd::read_run_log(run)),
                    evaluate_checkpoint(run, corpus, "overall", lssd::Split::kDev)});
  }
  const auto& base = rows.front();
  std::printf("%-16s %10s %12s", "run", "total_dub", "avg_dev_loss");
  for (const auto& l : base.eval.languages) std::printf(" %10s", ("d_bleu_" + l.language).c_str());
  std::printf("\n");
  for (const auto& row : rows) {
    if (row.eval.languages.size() != base.eval.languages.size()) {
      throw lssd::DataError("run " + row.name + " has a different language set");
    }
    std::printf("%-16s %10.4f %12.4f", row.name.c_str(), row.dub.total_dub,
                row.dub.overall_best_avg_dev_loss);
    for (std::size_t l = 0; l < row.eval.languages.size(); ++l) {
      std::printf(" %+10.2f", row.eval.languages[l].bleu - base.eval.languages[l].bleu);
    }
    std::printf("\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-specific self-distillation laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  fs::path out;
  fs::path data;
  fs::path run;
  std::string checkpoint = "overall";
  std::string split = "dev";
  std::vector<fs::path> runs;
  std::optional<fs::path> compare_data;

  auto* gen = app.add_subcommand("gen-data", "Generate and export a synthetic corpus");
  gen->add_option("--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output corpus directory")->required();

  auto* train = app.add_subcommand("train", "Train and write a run directory");
  train->add_option("--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  train->add_option("--data", data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", out, "Run directory")->required();

  auto* eval = app.add_subcommand("eval", "Decode a split with a saved checkpoint");
  eval->add_option("--run", run, "Run directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--data", data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--checkpoint", checkpoint, "overall, final or lang:<name>");
  eval->add_option("--split", split, "dev or test")->check(CLI::IsMember({"dev", "test"}));

  auto* analyze = app.add_subcommand("analyze", "Write the performance-deficit report of a run");
  analyze->add_option("--run", run, "Run directory")->required()->check(CLI::ExistingDirectory);

  auto* compare = app.add_subcommand("compare", "Compare runs against the first one");
  compare->add_option("--runs", runs, "Run directories")->required()->expected(1, -1)->check(CLI::ExistingDirectory);
  compare->add_option("--data", compare_data, "Corpus directory (default: regenerate from each config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*gen) return cmd_gen_data(config_path, out);
    if (*train) return cmd_train(config_path, data, out);
    if (*eval) return cmd_eval(run, data, checkpoint, split);
    if (*analyze) return cmd_analyze(run);
    if (*compare) return cmd_compare(runs, compare_data);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsageError;
}
