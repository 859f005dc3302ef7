// Copyright 2026 The LSSD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lssd/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace lssd {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(s);
  while (std::getline(is, field, sep)) out.push_back(trim(field));
  return out;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

LanguageSpec parse_language(const std::string& item) {
  const auto f = split(item, ':');
  if (f.size() != 6 || f[0].empty()) {
    throw ConfigError("languages: '" + item + "' is not name:train:dev:test:transform:param");
  }
  LanguageSpec spec;
  spec.name = f[0];
  spec.train_size = parse_int<std::size_t>("languages", f[1]);
  spec.dev_size = parse_int<std::size_t>("languages", f[2]);
  spec.test_size = parse_int<std::size_t>("languages", f[3]);
  spec.transform_name = f[4];
  spec.transform_param = parse_int<std::int64_t>("languages", f[5]);
  return spec;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::map<std::string, std::map<std::string, Setter>>& setters() {
  static const std::map<std::string, std::map<std::string, Setter>> table = {
      {"model",
       {
           {"vocab_payload", [](auto& c, auto& k, auto& v) { c.payload_vocab = parse_int<std::size_t>(k, v); }},
           {"embed_dim", [](auto& c, auto& k, auto& v) { c.model.embed_dim = parse_int<std::size_t>(k, v); }},
           {"hidden_dim", [](auto& c, auto& k, auto& v) { c.model.hidden_dim = parse_int<std::size_t>(k, v); }},
           {"layers", [](auto& c, auto& k, auto& v) { c.model.num_layers = parse_int<std::size_t>(k, v); }},
           {"heads", [](auto& c, auto& k, auto& v) { c.model.num_heads = parse_int<std::size_t>(k, v); }},
           {"max_seq_len", [](auto& c, auto& k, auto& v) { c.model.max_seq_len = parse_int<std::size_t>(k, v); }},
           {"dropout", [](auto& c, auto& k, auto& v) { c.model.dropout = parse_real(k, v); }},
       }},
      {"data",
       {
           {"languages",
            [](auto& c, auto&, auto& v) {
              c.languages.clear();
              for (const auto& item : split(v, ',')) {
                if (!item.empty()) c.languages.push_back(parse_language(item));
              }
            }},
           {"payload_len_min", [](auto& c, auto& k, auto& v) { c.payload_len_min = parse_int<std::size_t>(k, v); }},
           {"payload_len_max", [](auto& c, auto& k, auto& v) { c.payload_len_max = parse_int<std::size_t>(k, v); }},
           {"seed", [](auto& c, auto& k, auto& v) { c.data_seed = parse_int<std::uint64_t>(k, v); }},
       }},
      {"train",
       {
           {"mode",
            [](auto& c, auto&, auto& v) {
              try {
                c.train.loss.mode = parse_loss_mode(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("mode: ") + e.what());
              }
            }},
           {"epochs", [](auto& c, auto& k, auto& v) { c.train.epochs = parse_int<std::size_t>(k, v); }},
           {"steps_per_epoch", [](auto& c, auto& k, auto& v) { c.train.steps_per_epoch = parse_int<std::size_t>(k, v); }},
           {"batch_size", [](auto& c, auto& k, auto& v) { c.train.batch_size = parse_int<std::size_t>(k, v); }},
           {"alpha", [](auto& c, auto& k, auto& v) { c.train.loss.alpha = parse_real(k, v); }},
           {"sigma", [](auto& c, auto& k, auto& v) { c.train.loss.sigma = parse_real(k, v); }},
           {"tau", [](auto& c, auto& k, auto& v) { c.train.tau = parse_real(k, v); }},
           {"label_smoothing", [](auto& c, auto& k, auto& v) { c.train.loss.label_smoothing = parse_real(k, v); }},
           {"smoothed_dev_loss", [](auto& c, auto& k, auto& v) { c.train.smoothed_dev_loss = parse_bool(k, v); }},
           {"sentence_prob",
            [](auto& c, auto& k, auto& v) {
              if (v == "arith") {
                c.train.loss.sentence_prob = SentenceProbabilityRule::kArithmetic;
              } else if (v == "geom") {
                c.train.loss.sentence_prob = SentenceProbabilityRule::kGeometric;
              } else {
                throw ConfigError(k + ": expected arith or geom, got '" + v + "'");
              }
            }},
           {"lr_scale", [](auto& c, auto& k, auto& v) { c.train.lr_scale = parse_real(k, v); }},
           {"warmup_steps", [](auto& c, auto& k, auto& v) { c.train.warmup_steps = parse_int<std::size_t>(k, v); }},
           {"adam_beta1", [](auto& c, auto& k, auto& v) { c.train.adam_beta1 = parse_real(k, v); }},
           {"adam_beta2", [](auto& c, auto& k, auto& v) { c.train.adam_beta2 = parse_real(k, v); }},
           {"adam_eps", [](auto& c, auto& k, auto& v) { c.train.adam_eps = parse_real(k, v); }},
           {"seed", [](auto& c, auto& k, auto& v) { c.train.seed = parse_int<std::uint64_t>(k, v); }},
       }},
  };
  return table;
}

}  // namespace

void ExperimentConfig::finalize() {
  if (languages.empty()) throw ConfigError("data.languages must name at least one language");
  if (payload_vocab == 0) throw ConfigError("model.vocab_payload must be at least 1");
  if (payload_len_min == 0 || payload_len_min > payload_len_max) {
    throw ConfigError("data.payload_len_min must lie in [1, payload_len_max]");
  }
  std::vector<std::string> names;
  for (auto& spec : languages) {
    for (const auto& n : names) {
      if (n == spec.name) throw ConfigError("duplicate language name '" + spec.name + "'");
    }
    names.push_back(spec.name);
    spec.payload_min = payload_len_min;
    spec.payload_max = payload_len_max;
    spec.transform = Transform::from_spec(spec.transform_name, spec.transform_param, payload_vocab);
    spec.transform.validate(payload_vocab);
  }
  model.vocab_size = 3 + languages.size() + payload_vocab;
  model.validate();
  if (model.max_seq_len < payload_len_max + 2) {
    throw ConfigError("model.max_seq_len " + std::to_string(model.max_seq_len) +
                      " cannot hold tag + " + std::to_string(payload_len_max) + " tokens + end marker");
  }
  train.validate();
}

ExperimentConfig default_experiment() {
  ExperimentConfig c;
  c.model.max_seq_len = 16;
  // A payload vocabulary this large leaves about a quarter of the lowest
  // resource language's dev tokens unseen in its training split; tau = 10
  // samples it often enough to memorize that split within the run.
  c.payload_vocab = 768;
  c.train.tau = 10.0;
  c.train.lr_scale = 1.0;
  c.languages = {
      parse_language("lo:200:200:200:perm:11"),
      parse_language("mlo:400:200:200:perm:7"),
      parse_language("mhi:4000:200:200:shift:5"),
      parse_language("hi:8000:200:200:perm:3"),
  };
  c.finalize();
  return c;
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c = default_experiment();
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!setters().contains(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside of a section");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& keys = setters().at(section);
    const auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
    try {
      it->second(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  c.finalize();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  const auto& m = c.model;
  os << "[model]\n"
     << "vocab_payload = " << c.payload_vocab << '\n'
     << "embed_dim = " << m.embed_dim << '\n'
     << "hidden_dim = " << m.hidden_dim << '\n'
     << "layers = " << m.num_layers << '\n'
     << "heads = " << m.num_heads << '\n'
     << "max_seq_len = " << m.max_seq_len << '\n'
     << "dropout = " << format_real(m.dropout) << "\n\n";
  os << "[data]\nlanguages = ";
  for (std::size_t i = 0; i < c.languages.size(); ++i) {
    const auto& l = c.languages[i];
    if (i) os << ", ";
    os << l.name << ':' << l.train_size << ':' << l.dev_size << ':' << l.test_size << ':'
       << l.transform_name << ':' << l.transform_param;
  }
  os << '\n'
     << "payload_len_min = " << c.payload_len_min << '\n'
     << "payload_len_max = " << c.payload_len_max << '\n'
     << "seed = " << c.data_seed << "\n\n";
  const auto& t = c.train;
  os << "[train]\n"
     << "mode = " << to_string(t.loss.mode) << '\n'
     << "epochs = " << t.epochs << '\n'
     << "steps_per_epoch = " << t.steps_per_epoch << '\n'
     << "batch_size = " << t.batch_size << '\n'
     << "alpha = " << format_real(t.loss.alpha) << '\n'
     << "sigma = " << format_real(t.loss.sigma) << '\n'
     << "tau = " << format_real(t.tau) << '\n'
     << "label_smoothing = " << format_real(t.loss.label_smoothing) << '\n'
     << "smoothed_dev_loss = " << (t.smoothed_dev_loss ? "true" : "false") << '\n'
     << "sentence_prob = "
     << (t.loss.sentence_prob == SentenceProbabilityRule::kArithmetic ? "arith" : "geom") << '\n'
     << "lr_scale = " << format_real(t.lr_scale) << '\n'
     << "warmup_steps = " << t.warmup_steps << '\n'
     << "adam_beta1 = " << format_real(t.adam_beta1) << '\n'
     << "adam_beta2 = " << format_real(t.adam_beta2) << '\n'
     << "adam_eps = " << format_real(t.adam_eps) << '\n'
     << "seed = " << t.seed << '\n';
  return os.str();
}

MultilingualCorpus build_corpus(const ExperimentConfig& config) {
  return generate_corpus(config.languages, config.payload_vocab, config.data_seed);
}

}  // namespace lssd
