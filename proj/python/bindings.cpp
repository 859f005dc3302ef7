// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "lssd/analysis.hpp"
#include "lssd/config.hpp"

namespace py = pybind11;
using namespace lssd;

namespace {

// Trains from INI text and optionally writes a run directory.
RunLog train_from_ini(const std::string& ini, const std::string& out_dir) {
  const ExperimentConfig cfg = parse_config(ini);
  const MultilingualCorpus corpus = build_corpus(cfg);
  RunResult result = [&] {
    py::gil_scoped_release release;
    return run_training(corpus, cfg.model, cfg.train);
  }();
  if (!out_dir.empty()) write_run_directory(result, out_dir, to_ini(cfg));
  return result.log;
}

}  // namespace

PYBIND11_MODULE(_lssd, m) {
  m.doc() = "Language-specific self-distillation on synthetic multilingual translation.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);

  py::class_<EpochRecord>(m, "EpochRecord")
      .def_readonly("epoch", &EpochRecord::epoch)
      .def_readonly("dev_losses", &EpochRecord::dev_losses)
      .def_readonly("avg_dev_loss", &EpochRecord::avg_dev_loss)
      .def_readonly("switch_after", &EpochRecord::switch_after)
      .def_readonly("teacher_replaced", &EpochRecord::teacher_replaced)
      .def_readonly("mean_train_loss", &EpochRecord::mean_train_loss);

  py::class_<RunLog>(m, "RunLog")
      .def_readonly("languages", &RunLog::languages)
      .def_readonly("epochs", &RunLog::epochs);

  py::class_<DubEntry>(m, "DubEntry")
      .def_readonly("language", &DubEntry::language)
      .def_readonly("overall_best_dev_loss", &DubEntry::overall_best_dev_loss)
      .def_readonly("language_best_dev_loss", &DubEntry::language_best_dev_loss)
      .def_readonly("gap", &DubEntry::gap)
      .def_readonly("best_epoch", &DubEntry::best_epoch)
      .def_readonly("first_switch_on", &DubEntry::first_switch_on);

  py::class_<DubReport>(m, "DubReport")
      .def_readonly("languages", &DubReport::languages)
      .def_readonly("total_dub", &DubReport::total_dub)
      .def_readonly("overall_best_epoch", &DubReport::overall_best_epoch)
      .def("__str__", &format_dub_report);

  m.def("temperature_probs", &temperature_probs, py::arg("sizes"), py::arg("tau"));
  m.def("corpus_bleu", &corpus_bleu, py::arg("hypotheses"), py::arg("references"), py::arg("max_n") = 4,
        py::arg("floor_smoothing") = false);
  m.def("token_accuracy", &token_accuracy, py::arg("hypotheses"), py::arg("references"));
  m.def("sample_weight",
        [](const std::string& mode, double p_teacher, double p_student, double sigma) {
          return sample_weight(parse_loss_mode(mode), p_teacher, p_student, sigma);
        },
        py::arg("mode"), py::arg("p_teacher"), py::arg("p_student"), py::arg("sigma") = 2.0);
  m.def("default_config", [] { return to_ini(default_experiment()); },
        "INI text of the default experiment profile.");
  m.def("normalize_config", [](const std::string& ini) { return to_ini(parse_config(ini)); }, py::arg("ini"),
        "Parses INI text and returns it in canonical form with defaults filled in.");
  m.def("train", &train_from_ini, py::arg("ini"), py::arg("out_dir") = std::string(),
        "Trains from INI text; writes a run directory when out_dir is given.");
  m.def("read_run_log", [](const std::string& dir) { return read_run_log(dir); }, py::arg("run_dir"));
  m.def("compute_dub", &compute_dub, py::arg("log"));
}
