#pragma once

// Line-oriented experiment configuration: `key = value` with dotted
// namespaces, '#' comments, and a lossless round trip through disk.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "ctckd/beam.hpp"
#include "ctckd/conformer.hpp"
#include "ctckd/corpus.hpp"
#include "ctckd/distill.hpp"
#include "ctckd/masked_lm.hpp"
#include "ctckd/optim.hpp"

namespace ctckd {

using ConfigMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& raw) {
  char* end = nullptr;
  const double v = std::strtod(raw.c_str(), &end);
  check_arg(end != raw.c_str() && *end == '\0', "config: bad number for ", key, ": '",
            raw, "'");
  return v;
}

inline int64_t parse_int(const std::string& key, const std::string& raw) {
  char* end = nullptr;
  const long long v = std::strtoll(raw.c_str(), &end, 10);
  check_arg(end != raw.c_str() && *end == '\0', "config: bad integer for ", key, ": '",
            raw, "'");
  return v;
}

inline uint64_t parse_uint(const std::string& key, const std::string& raw) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(raw.c_str(), &end, 10);
  check_arg(end != raw.c_str() && *end == '\0' && raw[0] != '-',
            "config: bad unsigned integer for ", key, ": '", raw, "'");
  return v;
}

}  // namespace detail

inline ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    lineno++;
    const std::string stripped = detail::trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const size_t eq = stripped.find('=');
    check_arg(eq != std::string::npos, "config: line ", lineno, " has no '=': '",
              stripped, "'");
    const std::string key = detail::trim(stripped.substr(0, eq));
    const std::string value = detail::trim(stripped.substr(eq + 1));
    check_arg(!key.empty(), "config: line ", lineno, " has an empty key");
    check_arg(out.find(key) == out.end(), "config: duplicate key '", key, "' at line ",
              lineno);
    out[key] = value;
  }
  return out;
}

struct ExperimentConfig {
  uint64_t seed = 0;  // mandatory in files; no silent default on load
  std::string out_dir = "runs/default";
  std::string corpus_dir = "data/corpus";
  GenDataConfig corpus;   // corpus.seed / corpus.out_dir are derived, not stored
  EncoderConfig encoder;
  DecoderConfig decoder;
  TeacherConfig teacher;
  MlmTrainConfig teacher_train;
  int ngram_order = 6;
  DistillWeights distill;     // taps are derived from variant + distill.m
  int distill_m = 1;          // taps used by the inter variants
  double interctc_weight = 0.5;
  int epochs = 20;
  int batch = 16;
  OptimizerConfig opt;
  int decode_beam = 10;
  double decode_lm_weight = 0.3;
  double decode_ins_penalty = 0.0;

  ConfigMap to_map() const {
    using detail::format_double;
    ConfigMap m;
    m["seed"] = std::to_string(seed);
    m["out_dir"] = out_dir;
    m["corpus.dir"] = corpus_dir;
    m["corpus.vocab_size"] = std::to_string(corpus.vocab_size);
    m["corpus.feature_dim"] = std::to_string(corpus.feature_dim);
    m["corpus.train_utts"] = std::to_string(corpus.train_utts);
    m["corpus.dev_utts"] = std::to_string(corpus.dev_utts);
    m["corpus.test_utts"] = std::to_string(corpus.test_utts);
    m["corpus.text_sentences"] = std::to_string(corpus.text_sentences);
    m["corpus.min_len"] = std::to_string(corpus.min_len);
    m["corpus.max_len"] = std::to_string(corpus.max_len);
    m["corpus.noise"] = format_double(corpus.noise_level);
    m["corpus.concentration"] = format_double(corpus.concentration);
    m["encoder.layers"] = std::to_string(encoder.num_layers);
    m["encoder.dim"] = std::to_string(encoder.dim);
    m["encoder.heads"] = std::to_string(encoder.heads);
    m["encoder.ff_dim"] = std::to_string(encoder.ff_dim);
    m["encoder.conv_kernel"] = std::to_string(encoder.conv_kernel);
    m["encoder.subsample"] = std::to_string(encoder.subsample);
    m["encoder.dropout"] = format_double(encoder.dropout);
    m["decoder.layers"] = std::to_string(decoder.layers);
    m["decoder.dim"] = std::to_string(decoder.dim);
    m["decoder.heads"] = std::to_string(decoder.heads);
    m["decoder.ff_dim"] = std::to_string(decoder.ff_dim);
    m["decoder.dropout"] = format_double(decoder.dropout);
    m["teacher.layers"] = std::to_string(teacher.layers);
    m["teacher.dim"] = std::to_string(teacher.dim);
    m["teacher.heads"] = std::to_string(teacher.heads);
    m["teacher.ff_dim"] = std::to_string(teacher.ff_dim);
    m["teacher.dropout"] = format_double(teacher.dropout);
    m["teacher.epochs"] = std::to_string(teacher_train.epochs);
    m["teacher.batch"] = std::to_string(teacher_train.batch);
    m["teacher.mask_rate"] = format_double(teacher_train.mask_rate);
    m["teacher.peak_lr"] = format_double(teacher_train.opt.peak_lr);
    m["teacher.warmup"] = std::to_string(teacher_train.opt.warmup_steps);
    m["ngram.order"] = std::to_string(ngram_order);
    m["distill.alpha"] = format_double(distill.alpha);
    m["distill.beta"] = format_double(distill.beta);
    m["distill.k"] = std::to_string(distill.k);
    m["distill.m"] = std::to_string(distill_m);
    m["interctc.weight"] = format_double(interctc_weight);
    m["train.epochs"] = std::to_string(epochs);
    m["train.batch"] = std::to_string(batch);
    m["train.peak_lr"] = format_double(opt.peak_lr);
    m["train.warmup"] = std::to_string(opt.warmup_steps);
    m["decode.beam"] = std::to_string(decode_beam);
    m["decode.lm_weight"] = format_double(decode_lm_weight);
    m["decode.ins_penalty"] = format_double(decode_ins_penalty);
    return m;
  }

  static ExperimentConfig from_map(const ConfigMap& m) {
    using detail::parse_double;
    using detail::parse_int;
    using detail::parse_uint;
    check_arg(m.find("seed") != m.end(), "config: missing mandatory key 'seed'");
    ExperimentConfig cfg;
    for (const auto& [key, raw] : m) {
      if (key == "seed") cfg.seed = parse_uint(key, raw);
      else if (key == "out_dir") cfg.out_dir = raw;
      else if (key == "corpus.dir") cfg.corpus_dir = raw;
      else if (key == "corpus.vocab_size") cfg.corpus.vocab_size = static_cast<int>(parse_int(key, raw));
      else if (key == "corpus.feature_dim") cfg.corpus.feature_dim = static_cast<int>(parse_int(key, raw));
      else if (key == "corpus.train_utts") cfg.corpus.train_utts = static_cast<int>(parse_int(key, raw));
      else if (key == "corpus.dev_utts") cfg.corpus.dev_utts = static_cast<int>(parse_int(key, raw));
      else if (key == "corpus.test_utts") cfg.corpus.test_utts = static_cast<int>(parse_int(key, raw));
      else if (key == "corpus.text_sentences") cfg.corpus.text_sentences = static_cast<int>(parse_int(key, raw));
      else if (key == "corpus.min_len") cfg.corpus.min_len = static_cast<int>(parse_int(key, raw));
      else if (key == "corpus.max_len") cfg.corpus.max_len = static_cast<int>(parse_int(key, raw));
      else if (key == "corpus.noise") cfg.corpus.noise_level = parse_double(key, raw);
      else if (key == "corpus.concentration") cfg.corpus.concentration = parse_double(key, raw);
      else if (key == "encoder.layers") cfg.encoder.num_layers = static_cast<int>(parse_int(key, raw));
      else if (key == "encoder.dim") cfg.encoder.dim = parse_int(key, raw);
      else if (key == "encoder.heads") cfg.encoder.heads = static_cast<int>(parse_int(key, raw));
      else if (key == "encoder.ff_dim") cfg.encoder.ff_dim = parse_int(key, raw);
      else if (key == "encoder.conv_kernel") cfg.encoder.conv_kernel = static_cast<int>(parse_int(key, raw));
      else if (key == "encoder.subsample") cfg.encoder.subsample = static_cast<int>(parse_int(key, raw));
      else if (key == "encoder.dropout") cfg.encoder.dropout = parse_double(key, raw);
      else if (key == "decoder.layers") cfg.decoder.layers = static_cast<int>(parse_int(key, raw));
      else if (key == "decoder.dim") cfg.decoder.dim = parse_int(key, raw);
      else if (key == "decoder.heads") cfg.decoder.heads = static_cast<int>(parse_int(key, raw));
      else if (key == "decoder.ff_dim") cfg.decoder.ff_dim = parse_int(key, raw);
      else if (key == "decoder.dropout") cfg.decoder.dropout = parse_double(key, raw);
      else if (key == "teacher.layers") cfg.teacher.layers = static_cast<int>(parse_int(key, raw));
      else if (key == "teacher.dim") cfg.teacher.dim = static_cast<int>(parse_int(key, raw));
      else if (key == "teacher.heads") cfg.teacher.heads = static_cast<int>(parse_int(key, raw));
      else if (key == "teacher.ff_dim") cfg.teacher.ff_dim = static_cast<int>(parse_int(key, raw));
      else if (key == "teacher.dropout") cfg.teacher.dropout = parse_double(key, raw);
      else if (key == "teacher.epochs") cfg.teacher_train.epochs = static_cast<int>(parse_int(key, raw));
      else if (key == "teacher.batch") cfg.teacher_train.batch = static_cast<int>(parse_int(key, raw));
      else if (key == "teacher.mask_rate") cfg.teacher_train.mask_rate = parse_double(key, raw);
      else if (key == "teacher.peak_lr") cfg.teacher_train.opt.peak_lr = parse_double(key, raw);
      else if (key == "teacher.warmup") cfg.teacher_train.opt.warmup_steps = static_cast<int>(parse_int(key, raw));
      else if (key == "ngram.order") cfg.ngram_order = static_cast<int>(parse_int(key, raw));
      else if (key == "distill.alpha") cfg.distill.alpha = parse_double(key, raw);
      else if (key == "distill.beta") cfg.distill.beta = parse_double(key, raw);
      else if (key == "distill.k") cfg.distill.k = static_cast<int>(parse_int(key, raw));
      else if (key == "distill.m") cfg.distill_m = static_cast<int>(parse_int(key, raw));
      else if (key == "interctc.weight") cfg.interctc_weight = parse_double(key, raw);
      else if (key == "train.epochs") cfg.epochs = static_cast<int>(parse_int(key, raw));
      else if (key == "train.batch") cfg.batch = static_cast<int>(parse_int(key, raw));
      else if (key == "train.peak_lr") cfg.opt.peak_lr = parse_double(key, raw);
      else if (key == "train.warmup") cfg.opt.warmup_steps = static_cast<int>(parse_int(key, raw));
      else if (key == "decode.beam") cfg.decode_beam = static_cast<int>(parse_int(key, raw));
      else if (key == "decode.lm_weight") cfg.decode_lm_weight = parse_double(key, raw);
      else if (key == "decode.ins_penalty") cfg.decode_ins_penalty = parse_double(key, raw);
      else check_arg(false, "config: unknown key '", key, "'");
    }
    cfg.teacher_train.seed = cfg.seed;
    return cfg;
  }

  std::string serialize() const {
    std::ostringstream os;
    for (const auto& [key, value] : to_map()) os << key << " = " << value << "\n";
    return os.str();
  }

  static ExperimentConfig deserialize(const std::string& text) {
    return from_map(parse_config_text(text));
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    check_state(out.good(), "config: cannot write ", path);
    out << serialize();
    check_state(out.good(), "config: short write to ", path);
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    check_arg(in.good(), "config: cannot read ", path);
    std::ostringstream text;
    text << in.rdbuf();
    return deserialize(text.str());
  }
};

}  // namespace ctckd
