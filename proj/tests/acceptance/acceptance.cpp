// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.
//
//   lssd_acceptance            all criteria
//   lssd_acceptance 1 4 12     a subset

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lssd/analysis.hpp"
#include "lssd/config.hpp"

namespace fs = std::filesystem;
using namespace lssd;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradients of the combined objective against central differences.

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  ModelConfig cfg;
  cfg.vocab_size = 32;
  cfg.embed_dim = 16;
  cfg.hidden_dim = 32;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.max_seq_len = 8;
  BasicSeq2Seq<double> student = Seq2SeqModel(cfg, 101).cast<double>();
  BasicSeq2Seq<double> teacher = Seq2SeqModel(cfg, 202).cast<double>();

  std::mt19937_64 rng(7);
  std::uniform_int_distribution<TokenId> tok(3, 31);
  const std::size_t batch = 3, src_len = 6, tgt_len = 5;
  TokenMatrix src(batch, src_len), tgt(batch, tgt_len);
  for (auto& id : src.ids) id = tok(rng);
  for (auto& id : tgt.ids) id = tok(rng);
  std::vector<std::uint8_t> mask(batch * tgt_len, 1);
  // Ragged batch: the last row is padded.
  tgt.at(2, 4) = kPadId;
  tgt.at(2, 3) = kEosId;
  mask[2 * tgt_len + 4] = 0;
  src.at(2, 5) = kPadId;

  LossConfig loss_cfg;
  loss_cfg.mode = LossMode::kLssdAdaptive;
  Tape<double> frozen(false);
  const Tensor64 teacher_dists = teacher.forward(frozen, src, tgt, false);

  // G is a per-sample constant of the step (no gradient flows through it);
  // it is computed once at the base point and held fixed.
  std::vector<double> g(batch);
  {
    Tape<double> t(false);
    const auto s = student.forward(t, src, tgt, false);
    const auto pt = sentence_probabilities(teacher_dists, tgt, mask, loss_cfg.sentence_prob);
    const auto ps = sentence_probabilities(s, tgt, mask, loss_cfg.sentence_prob);
    for (std::size_t b = 0; b < batch; ++b) g[b] = sample_weight(loss_cfg.mode, pt[b], ps[b], loss_cfg.sigma);
  }
  auto objective = [&](Tape<double>& tape) {
    const auto dists = student.forward(tape, src, tgt, false);
    const auto nmt = nmt_loss(tape, dists, tgt, mask, loss_cfg.label_smoothing);
    const auto kd = distill_loss(tape, teacher_dists, dists, mask, g);
    return combined_loss(tape, nmt, kd, loss_cfg.alpha, true);
  };
  {
    Tape<double> tape;
    tape.backward(objective(tape));
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  auto& params = student.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].tensor.size(); ++i) coords.emplace_back(p, i);
  }
  std::shuffle(coords.begin(), coords.end(), rng);
  // Every parameter contributes at least one coordinate.
  std::vector<std::pair<std::size_t, std::size_t>> sample;
  std::set<std::size_t> covered;
  for (const auto& c : coords) {
    if (!covered.contains(c.first)) {
      covered.insert(c.first);
      sample.push_back(c);
    }
  }
  for (const auto& c : coords) {
    if (sample.size() >= 600) break;
    sample.push_back(c);
  }

  double worst = 0.0;
  std::string worst_name;
  for (const auto& [p, i] : sample) {
    const double analytic = params[p].tensor.grad()[i];
    double& x = params[p].tensor.mutable_values()[i];
    const double numeric = central_difference<double>(
        [&] {
          Tape<double> t(false);
          return objective(t).item();
        },
        x, 1e-6);
    const double err = relative_error(analytic, numeric);
    if (err > worst) {
      worst = err;
      worst_name = params[p].name;
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst < 1e-4 && sample.size() >= 500 && secs < 60.0;
  return {pass, std::to_string(sample.size()) + " coordinates, max rel err " + fmt("%.3g", worst) + " (" +
                    worst_name + "), " + fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// 2. Entropy, Gibbs and one-hot identities in the training precision.

Outcome loss_identities() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> vocab(2, 64);
  std::gamma_distribution<double> gamma(0.5, 1.0);
  auto draw = [&](std::size_t v) {
    std::vector<float> p(v);
    double total = 0;
    std::vector<double> raw(v);
    for (auto& x : raw) total += (x = gamma(rng) + 1e-4);
    for (std::size_t i = 0; i < v; ++i) p[i] = static_cast<float>(raw[i] / total);
    return p;
  };
  const std::vector<std::uint8_t> mask{1};
  const std::vector<double> g{1.0};
  double worst_entropy = 0, worst_gibbs = 0, worst_onehot = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t v = vocab(rng);
    const auto p = draw(v);
    const auto q = draw(v);
    const Tensor tp({1, 1, v}, p), tq({1, 1, v}, q);
    Tape<float> tape(false);
    double h = 0;
    for (const float x : p) h -= static_cast<double>(x) * std::log(static_cast<double>(x));
    const double self = distill_loss(tape, tp, tp, mask, g).item();
    const double cross = distill_loss(tape, tp, tq, mask, g).item();
    worst_entropy = std::max(worst_entropy, std::abs(self - h));
    worst_gibbs = std::max(worst_gibbs, h - cross);
    const TokenId target = static_cast<TokenId>(static_cast<std::size_t>(trial) % v);
    std::vector<float> onehot(v, 0.0f);
    onehot[static_cast<std::size_t>(target)] = 1.0f;
    TokenMatrix t(1, 1);
    t.ids = {target};
    const double nmt = nmt_loss(tape, tq, t, mask, 0.0).item();
    const double kd = distill_loss(tape, Tensor({1, 1, v}, onehot), tq, mask, g).item();
    worst_onehot = std::max(worst_onehot, std::abs(nmt - kd));
  }
  const bool pass = worst_entropy <= 1e-6 && worst_gibbs <= 1e-6 && worst_onehot <= 1e-6;
  return {pass, "max |CE(p,p)-H| " + fmt("%.2g", worst_entropy) + ", max Gibbs violation " +
                    fmt("%.2g", std::max(0.0, worst_gibbs)) + ", max one-hot gap " + fmt("%.2g", worst_onehot)};
}

// ---------------------------------------------------------------------------
// 3. Scripted switch trajectory: k' improvements, up, up, down.

Outcome switch_state_machine() {
  ModelConfig cfg;
  cfg.vocab_size = 8;
  cfg.embed_dim = 4;
  cfg.hidden_dim = 4;
  cfg.num_layers = 1;
  cfg.num_heads = 1;
  cfg.max_seq_len = 4;
  Seq2SeqModel model(cfg, 1);
  bool pass = true;
  std::string detail;
  for (const std::size_t k : {1u, 3u, 6u}) {
    std::vector<double> losses;
    for (std::size_t e = 0; e < k; ++e) losses.push_back(5.0 - static_cast<double>(e));
    const double best = losses.back();
    losses.push_back(best + 0.3);
    losses.push_back(best + 0.5);
    losses.push_back(best - 0.2);
    std::vector<bool> expected(k, false);
    expected.insert(expected.end(), {true, true, false});

    LanguageState state;
    std::vector<bool> switches;
    std::size_t replacements = 0;
    for (std::size_t e = 0; e < losses.size(); ++e) {
      replacements += update_language_state(state, losses[e], model, static_cast<std::uint32_t>(e + 1)) ? 1 : 0;
      switches.push_back(state.switch_on);
    }
    const bool ok = switches == expected && replacements == k + 1 &&
                    state.first_switch_on_epoch == static_cast<std::uint32_t>(k + 1);
    pass &= ok;
    detail += "k'=" + std::to_string(k) + (ok ? " ok" : " MISMATCH") + "; ";
  }
  return {pass, detail + "switches off x k', on, on, off with k'+1 replacements"};
}

// ---------------------------------------------------------------------------
// 4. Weight rule ranges.

Outcome weight_rules() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t violations = 0, truncated = 0;
  for (int i = 0; i < 10000; ++i) {
    double pt = u(rng), ps = u(rng);
    if (pt == 0.0 || ps == 0.0) continue;
    if (i % 50 == 0) pt = ps;  // exercise the inclusive tie
    const double sel = sample_weight(LossMode::kLssdSelective, pt, ps, 2.0);
    const double ada = sample_weight(LossMode::kLssdAdaptive, pt, ps, 2.0);
    const bool trunc_expected = pt / ps > 2.0;
    truncated += trunc_expected ? 1 : 0;
    if (!(sel == 0.0 || sel == 1.0) || (sel == 1.0) != (pt >= ps)) ++violations;
    if (!(ada > 0.0 && ada <= 2.0)) ++violations;
    if (trunc_expected ? ada != 2.0 : ada != pt / ps) ++violations;
  }
  return {violations == 0, std::to_string(violations) + " violations over 10000 pairs (" +
                               std::to_string(truncated) + " truncated)"};
}

// ---------------------------------------------------------------------------
// Shared end-to-end runs for criteria 5 to 9.

struct ExperimentRuns {
  // runs[mode][seed index]
  std::map<LossMode, std::vector<RunResult>> runs;
  std::map<LossMode, std::vector<double>> seconds;
  std::vector<std::string> languages;
  bool done = false;
};

const std::vector<std::uint64_t> kSeeds{1, 2, 3};
const std::vector<LossMode> kModes{LossMode::kBaseline, LossMode::kLssdWhole, LossMode::kStsd};

ExperimentRuns& experiment_runs() {
  static ExperimentRuns runs;
  if (runs.done) return runs;
  for (const auto mode : kModes) {
    for (const auto seed : kSeeds) {
      ExperimentConfig cfg = default_experiment();
      cfg.train.loss.mode = mode;
      cfg.train.seed = seed;
      cfg.data_seed = seed;
      const auto corpus = build_corpus(cfg);
      const auto t0 = Clock::now();
      runs.runs[mode].push_back(run_training(corpus, cfg.model, cfg.train));
      runs.seconds[mode].push_back(seconds_since(t0));
      std::printf("  [run] %-10s seed %llu  %.1f s\n", to_string(mode).c_str(),
                  static_cast<unsigned long long>(seed), runs.seconds[mode].back());
      std::fflush(stdout);
    }
  }
  runs.languages = runs.runs[LossMode::kBaseline][0].log.languages;
  runs.done = true;
  return runs;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

double max_runtime(const ExperimentRuns& runs) {
  double worst = 0;
  for (const auto& [mode, s] : runs.seconds) worst = std::max(worst, *std::max_element(s.begin(), s.end()));
  return worst;
}

// 5. DUB non-negativity and sum on every completed run, plus L = 1 runs.
Outcome dub_properties() {
  auto& runs = experiment_runs();
  std::size_t checked = 0, bad = 0;
  auto check = [&](const RunLog& log) {
    const auto r = compute_dub(log);
    double sum = 0;
    for (const auto& e : r.languages) {
      if (e.gap < 0) ++bad;
      sum += e.gap;
    }
    if (std::abs(sum - r.total_dub) > 1e-9) ++bad;
    ++checked;
    return r.total_dub;
  };
  for (const auto& [mode, list] : runs.runs) {
    for (const auto& r : list) check(r.log);
  }
  std::size_t single_nonzero = 0;
  for (const auto mode : kModes) {
    ExperimentConfig cfg = parse_config(
        "[model]\nvocab_payload = 32\n[data]\nlanguages = solo:200:100:100:perm:5\n"
        "[train]\nepochs = 6\nsteps_per_epoch = 20\n");
    cfg.train.loss.mode = mode;
    const auto corpus = build_corpus(cfg);
    if (check(run_training(corpus, cfg.model, cfg.train).log) != 0.0) ++single_nonzero;
  }
  return {bad == 0 && single_nonzero == 0,
          std::to_string(checked) + " runs checked, " + std::to_string(bad) + " gap/sum violations, " +
              std::to_string(single_nonzero) + " single-language runs with non-zero DUB"};
}

// 6. Lowest-resource language peaks early and overfits (baseline).
Outcome convergence_inconsistency() {
  auto& runs = experiment_runs();
  const auto& base = runs.runs[LossMode::kBaseline];
  std::vector<double> margin_epochs, rises;
  std::string detail;
  int passes = 0;
  for (std::size_t s = 0; s < base.size(); ++s) {
    const auto& log = base[s].log;
    const auto dub = compute_dub(log);
    const auto& low = dub.languages.front();
    const double final_loss = log.epochs.back().dev_losses.front();
    const double rise = final_loss / low.language_best_dev_loss - 1.0;
    const bool earlier = low.best_epoch < dub.overall_best_epoch;
    const bool ok = earlier && rise >= 0.05;
    passes += ok ? 1 : 0;
    rises.push_back(rise);
    detail += "seed " + std::to_string(kSeeds[s]) + ": " + low.language + " best@" + std::to_string(low.best_epoch) +
              " overall@" + std::to_string(dub.overall_best_epoch) + " rise " + fmt("%.1f%%", 100 * rise) + "; ";
  }
  const double worst_time = max_runtime(runs);
  const bool pass = passes >= 2 && worst_time < 600.0;
  return {pass, detail + "slowest run " + fmt("%.0f s", worst_time)};
}

// 7. lssd_whole total DUB below baseline (median over seeds).
Outcome lssd_reduces_dub() {
  auto& runs = experiment_runs();
  std::vector<double> base, lssd;
  for (const auto& r : runs.runs[LossMode::kBaseline]) base.push_back(compute_dub(r.log).total_dub);
  for (const auto& r : runs.runs[LossMode::kLssdWhole]) lssd.push_back(compute_dub(r.log).total_dub);
  const double mb = median(base), ml = median(lssd);
  return {ml < mb && max_runtime(runs) < 600.0,
          "median total DUB baseline " + fmt("%.4f", mb) + ", lssd_whole " + fmt("%.4f", ml)};
}

// 8. lssd_whole per-language overall-best loss within +0.02 of baseline.
Outcome per_language_non_degradation() {
  auto& runs = experiment_runs();
  const std::size_t langs = runs.languages.size();
  bool pass = true;
  std::string detail;
  for (std::size_t l = 0; l < langs; ++l) {
    std::vector<double> base, lssd;
    for (const auto& r : runs.runs[LossMode::kBaseline]) base.push_back(compute_dub(r.log).languages[l].overall_best_dev_loss);
    for (const auto& r : runs.runs[LossMode::kLssdWhole]) lssd.push_back(compute_dub(r.log).languages[l].overall_best_dev_loss);
    const double mb = median(base), ml = median(lssd);
    const bool ok = ml <= mb + 0.02;
    pass &= ok;
    detail += runs.languages[l] + " " + fmt("%.4f", ml) + " vs " + fmt("%.4f", mb) + (ok ? "" : " (worse)") + "; ";
  }
  return {pass, detail};
}

// 9. baseline >= stsd >= lssd_whole in median total DUB.
Outcome stsd_ordering() {
  auto& runs = experiment_runs();
  std::map<LossMode, double> m;
  for (const auto mode : kModes) {
    std::vector<double> d;
    for (const auto& r : runs.runs[mode]) d.push_back(compute_dub(r.log).total_dub);
    m[mode] = median(d);
  }
  const bool pass = m[LossMode::kBaseline] >= m[LossMode::kStsd] && m[LossMode::kStsd] >= m[LossMode::kLssdWhole];
  return {pass, "median DUB baseline " + fmt("%.4f", m[LossMode::kBaseline]) + " >= stsd " +
                    fmt("%.4f", m[LossMode::kStsd]) + " >= lssd_whole " + fmt("%.4f", m[LossMode::kLssdWhole])};
}

// ---------------------------------------------------------------------------
// 10. Temperature sampling.

Outcome temperature_sampling() {
  const auto exact = temperature_probs({1, 3}, 1.0);
  const bool exact_ok = exact == std::vector<double>{0.25, 0.75};
  std::mt19937_64 rng(10);
  const std::vector<double> probs{0.1, 0.2, 0.3, 0.4};
  constexpr int kDraws = 100000;
  std::vector<int> counts(probs.size(), 0);
  for (int i = 0; i < kDraws; ++i) ++counts[sample_language(probs, rng)];
  double worst_z = 0;
  for (std::size_t l = 0; l < probs.size(); ++l) {
    const double se = std::sqrt(probs[l] * (1 - probs[l]) / kDraws);
    worst_z = std::max(worst_z, std::abs(counts[l] / static_cast<double>(kDraws) - probs[l]) / se);
  }
  double worst_uniform = 0;
  for (const double p : temperature_probs({1, 3}, 1e6)) worst_uniform = std::max(worst_uniform, std::abs(p - 0.5));
  const bool pass = exact_ok && worst_z <= 3.0 && worst_uniform <= 1e-5;
  return {pass, std::string("[1,3] tau 1 exact: ") + (exact_ok ? "yes" : "no") + ", max |z| over 100k draws " +
                    fmt("%.2f", worst_z) + ", tau 1e6 max deviation " + fmt("%.2g", worst_uniform)};
}

// ---------------------------------------------------------------------------
// 11. Two training invocations from the same config give identical CSVs.

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "lssd_acceptance_determinism";
  fs::remove_all(root);
  const std::string ini =
      "[model]\nvocab_payload = 32\n[data]\nlanguages = a:60:20:20:perm:3, b:200:20:20:shift:4\n"
      "[train]\nmode = lssd_adaptive\nepochs = 4\nsteps_per_epoch = 15\nbatch_size = 16\n";
  fs::create_directories(root);
  std::ofstream(root / "exp.ini") << ini;
  const auto cfg = load_config(root / "exp.ini");
  export_corpus(build_corpus(cfg), root / "data");
  for (const char* run : {"run_a", "run_b"}) {
    const auto c = load_config(root / "exp.ini");
    const auto corpus = import_corpus(root / "data");
    write_run_directory(run_training(corpus, c.model, c.train), root / run, to_ini(c));
  }
  bool pass = true;
  for (const char* f : {"loss_curves.csv", "avg_dev_loss.csv"}) {
    const auto a = slurp(root / "run_a" / f);
    pass &= !a.empty() && a == slurp(root / "run_b" / f);
  }
  fs::remove_all(root);
  return {pass, pass ? "loss_curves.csv and avg_dev_loss.csv byte-identical" : "CSV files differ"};
}

// ---------------------------------------------------------------------------
// 12. BLEU against the closed form and a brute-force oracle.

double brute_force_bleu(const std::vector<TokenSequence>& hyp, const std::vector<TokenSequence>& ref) {
  double log_p = 0, hl = 0, rl = 0;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    hl += static_cast<double>(hyp[i].size());
    rl += static_cast<double>(ref[i].size());
  }
  for (std::size_t n = 1; n <= 4; ++n) {
    double match = 0, total = 0;
    for (std::size_t s = 0; s < hyp.size(); ++s) {
      std::vector<TokenSequence> hg, rg;
      for (std::size_t i = 0; i + n <= hyp[s].size(); ++i) hg.emplace_back(hyp[s].begin() + i, hyp[s].begin() + i + n);
      for (std::size_t i = 0; i + n <= ref[s].size(); ++i) rg.emplace_back(ref[s].begin() + i, ref[s].begin() + i + n);
      total += static_cast<double>(hg.size());
      // Greedy one-to-one matching equals clipped counting.
      std::vector<bool> used(rg.size(), false);
      for (const auto& g : hg) {
        for (std::size_t j = 0; j < rg.size(); ++j) {
          if (!used[j] && rg[j] == g) {
            used[j] = true;
            ++match;
            break;
          }
        }
      }
    }
    if (total == 0 || match == 0) return 0.0;
    log_p += std::log(match / total);
  }
  return 100.0 * (hl < rl ? std::exp(1 - rl / hl) : 1.0) * std::exp(log_p / 4);
}

Outcome bleu_oracle() {
  const double closed = corpus_bleu({{1, 2, 3, 4}}, {{1, 2, 3, 4, 5}});
  const double want = 100 * std::exp(-0.25);
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> tok(0, 2), len(1, 8), count(1, 4);
  double worst = 0;
  for (int c = 0; c < 50; ++c) {
    std::vector<TokenSequence> hyp(static_cast<std::size_t>(count(rng))), ref(hyp.size());
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      hyp[i].resize(static_cast<std::size_t>(len(rng)));
      ref[i].resize(static_cast<std::size_t>(len(rng)));
      for (auto& t : hyp[i]) t = tok(rng);
      for (auto& t : ref[i]) t = tok(rng);
    }
    worst = std::max(worst, std::abs(corpus_bleu(hyp, ref) - brute_force_bleu(hyp, ref)));
  }
  const bool pass = std::abs(closed - want) <= 1e-3 && worst <= 1e-9;
  return {pass, "closed form " + fmt("%.6f", closed) + " (want " + fmt("%.6f", want) +
                    "), max oracle gap over 50 corpora " + fmt("%.2g", worst)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"loss identities", loss_identities},
      {"switch state machine", switch_state_machine},
      {"weight rule ranges", weight_rules},
      {"DUB properties", dub_properties},
      {"convergence inconsistency (baseline)", convergence_inconsistency},
      {"LSSD reduces DUB", lssd_reduces_dub},
      {"per-language non-degradation", per_language_non_degradation},
      {"STSD ordering", stsd_ordering},
      {"temperature sampling", temperature_sampling},
      {"training determinism", determinism},
      {"BLEU oracle", bleu_oracle},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(static_cast<std::size_t>(std::stoul(argv[i])));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.contains(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("[%s] %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
