#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ctckd/beam.hpp"
#include "ctckd/checkpoint.hpp"
#include "ctckd/common.hpp"
#include "ctckd/config.hpp"
#include "ctckd/conformer.hpp"
#include "ctckd/corpus.hpp"
#include "ctckd/ctc.hpp"
#include "ctckd/distill.hpp"
#include "ctckd/masked_lm.hpp"
#include "ctckd/metrics.hpp"
#include "ctckd/ngram.hpp"
#include "ctckd/optim.hpp"
#include "ctckd/tensor.hpp"
#include "ctckd/vocab.hpp"

namespace ctckd {

// ---------------------------------------------------------------------------
// Variants
// ---------------------------------------------------------------------------

enum class Variant { kCtc, kAedKd, kInterAedKd, kInterCtcInterAedKd };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kCtc: return "ctc";
    case Variant::kAedKd: return "aed-kd";
    case Variant::kInterAedKd: return "interaed-kd";
    case Variant::kInterCtcInterAedKd: return "interctc-interaed-kd";
  }
  fail("variant: bad enum value");
}

inline Variant parse_variant(const std::string& s) {
  if (s == "ctc") return Variant::kCtc;
  if (s == "aed-kd") return Variant::kAedKd;
  if (s == "interaed-kd") return Variant::kInterAedKd;
  if (s == "interctc-interaed-kd") return Variant::kInterCtcInterAedKd;
  check_arg(false, "variant: unknown '", s,
            "' (expected ctc|aed-kd|interaed-kd|interctc-interaed-kd)");
  return Variant::kCtc;
}

inline std::vector<Variant> all_variants() {
  return {Variant::kCtc, Variant::kAedKd, Variant::kInterAedKd,
          Variant::kInterCtcInterAedKd};
}

// Loss mixture a variant trains with. The tap list is derived from the
// configured M and the encoder depth; aed-kd forces beta to zero because it
// has no intermediate terms, and plain ctc zeroes the distillation weight
// entirely so the KL path is structurally unreachable.
inline DistillWeights variant_weights(const ExperimentConfig& cfg, Variant v) {
  DistillWeights w = cfg.distill;
  w.taps.clear();
  switch (v) {
    case Variant::kCtc:
      w.alpha = 0.0;
      w.beta = 0.0;
      break;
    case Variant::kAedKd:
      w.beta = 0.0;
      break;
    case Variant::kInterAedKd:
    case Variant::kInterCtcInterAedKd:
      w.taps = tap_layers(cfg.distill_m, cfg.encoder.num_layers);
      break;
  }
  w.validate();
  return w;
}

inline std::string run_dir_for(const ExperimentConfig& cfg, Variant v) {
  return str_cat(cfg.out_dir, "/", variant_name(v), "-seed", cfg.seed);
}

// ---------------------------------------------------------------------------
// Corpus artifacts
// ---------------------------------------------------------------------------

struct CorpusPaths {
  std::string dir;

  std::string vocab() const { return dir + "/vocab.txt"; }
  std::string language() const { return dir + "/language.txt"; }
  std::string text() const { return dir + "/text.txt"; }
  std::string manifest(const std::string& split) const { return dir + "/" + split + ".tsv"; }
  std::string teacher() const { return dir + "/teacher.bin"; }
  std::string ngram() const { return dir + "/ngram.txt"; }
  std::string soft_labels() const { return dir + "/soft_labels.bin"; }
  std::string teacher_ledger() const { return dir + "/teacher_ledger.txt"; }
};

struct SplitData {
  CorpusManifest man;
  std::vector<Tensor> feats;
};

inline SplitData load_split(const CorpusPaths& paths, const std::string& split,
                            const Vocab& vocab) {
  SplitData d;
  const std::string man_path = paths.manifest(split);
  d.man = load_manifest(man_path, vocab);
  d.feats.reserve(d.man.records.size());
  for (const UtteranceRecord& r : d.man.records)
    d.feats.push_back(load_record_features(man_path, r));
  return d;
}

inline void run_gen_data(const ExperimentConfig& cfg, bool force = false) {
  namespace fs = std::filesystem;
  GenDataConfig gcfg = cfg.corpus;
  gcfg.seed = cfg.seed;
  gcfg.out_dir = cfg.corpus_dir;
  if (fs::exists(gcfg.out_dir) && !fs::is_empty(gcfg.out_dir))
    check_state(force, "gen-data: ", gcfg.out_dir,
                " already holds files (pass --force to regenerate)");
  build_corpora(gcfg);
}

// ---------------------------------------------------------------------------
// Teacher pipeline: masked LM, n-gram LM, soft-label cache
// ---------------------------------------------------------------------------

struct TeacherArtifacts {
  uint64_t teacher_hash = 0;
  double masked_dev_accuracy = 0.0;
  std::vector<double> epoch_losses;  // empty when a saved teacher was reused
  bool teacher_reused = false;
  bool cache_reused = false;
  int ngram_order = 0;
  int soft_label_k = 0;
  size_t soft_label_sets = 0;
};

inline MaskedLm make_teacher(const ExperimentConfig& cfg, const Vocab& vocab,
                             ParamMap& params) {
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x7eac4e01));
  MaskedLm teacher(cfg.teacher, vocab.lm_size(), rng);
  teacher.register_params(params);
  return teacher;
}

inline TeacherArtifacts run_train_teacher(const ExperimentConfig& cfg,
                                          std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  CorpusPaths paths{cfg.corpus_dir};
  check_state(fs::exists(paths.vocab()) && fs::exists(paths.text()),
              "train-teacher: corpus not found under ", cfg.corpus_dir,
              " (run gen-data first)");
  Vocab vocab = Vocab::load(paths.vocab());
  std::vector<std::vector<int>> text = load_text_corpus(paths.text(), vocab);
  check_state(text.size() >= 20, "train-teacher: text corpus has only ", text.size(),
              " sentences");
  const size_t heldout_n = std::max<size_t>(1, std::min<size_t>(500, text.size() / 10));
  std::vector<std::vector<int>> heldout(text.end() - static_cast<long>(heldout_n),
                                        text.end());
  std::vector<std::vector<int>> train_text(text.begin(),
                                           text.end() - static_cast<long>(heldout_n));

  TeacherArtifacts art;
  ParamMap tparams;
  MaskedLm teacher = make_teacher(cfg, vocab, tparams);
  if (fs::exists(paths.teacher())) {
    assign_params(tparams, load_checkpoint(paths.teacher()));
    art.teacher_reused = true;
    if (log) *log << "teacher: reusing " << paths.teacher() << '\n';
  } else {
    MlmTrainConfig tcfg = cfg.teacher_train;
    tcfg.seed = cfg.seed;
    MlmTrainStats stats = mlm_train(teacher, tparams, train_text, heldout, vocab, tcfg);
    art.epoch_losses = stats.epoch_losses;
    save_checkpoint(tparams, paths.teacher());
    if (log) {
      for (size_t e = 0; e < stats.epoch_losses.size(); e++)
        *log << "teacher epoch " << (e + 1) << " loss " << stats.epoch_losses[e] << '\n';
    }
  }
  art.teacher_hash = tparams.value_hash();
  art.masked_dev_accuracy = masked_accuracy(teacher, heldout, vocab);
  if (log) *log << "teacher: masked dev accuracy " << art.masked_dev_accuracy << '\n';

  NgramLm lm = NgramLm::train(text, cfg.ngram_order, vocab.base_size());
  lm.save(paths.ngram(), vocab);
  art.ngram_order = cfg.ngram_order;

  art.soft_label_k = cfg.distill.k;
  CorpusManifest train_man = load_manifest(paths.manifest("train"), vocab);
  if (fs::exists(paths.soft_labels())) {
    SoftLabelCache cache = load_soft_label_cache(paths.soft_labels());
    art.cache_reused = cache.k == cfg.distill.k &&
                       cache.teacher_hash == art.teacher_hash &&
                       cache.sets.size() == train_man.records.size();
  }
  if (!art.cache_reused) {
    std::vector<SoftLabelSet> sets;
    sets.reserve(train_man.records.size());
    for (const UtteranceRecord& rec : train_man.records)
      sets.push_back(
          extract_soft_labels(rec.transcript, teacher, vocab, cfg.distill.k, rec.id));
    save_soft_label_cache(sets, cfg.distill.k, art.teacher_hash, paths.soft_labels());
  }
  art.soft_label_sets = train_man.records.size();
  if (log)
    *log << "teacher: soft labels for " << art.soft_label_sets << " utterances"
         << (art.cache_reused ? " (cache hit)" : "") << '\n';

  std::ofstream os(paths.teacher_ledger());
  check_state(os.good(), "train-teacher: cannot write ", paths.teacher_ledger());
  os << "# ctckd-teacher v1\n";
  os << "teacher_hash = " << std::hex << art.teacher_hash << std::dec << '\n';
  os << "masked_dev_accuracy = " << detail::format_double(art.masked_dev_accuracy) << '\n';
  os << "ngram_order = " << art.ngram_order << '\n';
  os << "soft_label_k = " << art.soft_label_k << '\n';
  os << "soft_label_sets = " << art.soft_label_sets << '\n';
  os << "teacher_reused = " << (art.teacher_reused ? 1 : 0) << '\n';
  os << "cache_reused = " << (art.cache_reused ? 1 : 0) << '\n';
  for (size_t e = 0; e < art.epoch_losses.size(); e++)
    os << "epoch_loss." << (e + 1) << " = " << detail::format_double(art.epoch_losses[e])
       << '\n';
  return art;
}

// ---------------------------------------------------------------------------
// Student model
// ---------------------------------------------------------------------------

struct AsrModel {
  Vocab vocab;
  ConformerEncoder encoder;
  AttentionDecoder decoder;
  ParamMap params;

  // All variants draw their weights from the same rng stream for a given
  // seed, so variant comparisons start from identical initializations.
  AsrModel(const ExperimentConfig& cfg, const Vocab& v) : vocab(v) {
    EncoderConfig ecfg = cfg.encoder;
    ecfg.input_dim = cfg.corpus.feature_dim;
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x5eed0a52));
    encoder = ConformerEncoder(ecfg, vocab.ctc_size(), rng);
    decoder = AttentionDecoder(cfg.decoder, vocab.base_size(), rng);
    encoder.register_params(params, "enc");
    decoder.register_params(params, "dec");
  }
};

// ---------------------------------------------------------------------------
// Run ledger
// ---------------------------------------------------------------------------

struct LossCounters {
  int64_t ctc_terms = 0;
  int64_t interctc_terms = 0;
  int64_t kl_final_terms = 0;
  int64_t kl_tap_terms = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_total = 0.0;
  double train_ctc = 0.0;
  double train_interctc = 0.0;
  double train_kl_final = 0.0;
  double train_kl_tap = 0.0;
  double dev_ctc = 0.0;
};

struct RunLedger {
  std::string variant;
  uint64_t seed = 0;
  std::vector<int> taps;
  double alpha = 0.0;
  double beta = 0.0;
  int k = 0;
  double interctc_weight = 0.0;
  LossCounters counters;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_dev_ctc = std::numeric_limits<double>::infinity();
  std::string checkpoint = "best.ckpt";

  void save(const std::string& path) const {
    std::ofstream os(path);
    check_state(os.good(), "ledger: cannot write ", path);
    os << "# ctckd-run v1\n";
    os << "variant = " << variant << '\n';
    os << "seed = " << seed << '\n';
    os << "taps =";
    for (size_t i = 0; i < taps.size(); i++) os << (i ? "," : " ") << taps[i];
    os << '\n';
    os << "alpha = " << detail::format_double(alpha) << '\n';
    os << "beta = " << detail::format_double(beta) << '\n';
    os << "k = " << k << '\n';
    os << "interctc_weight = " << detail::format_double(interctc_weight) << '\n';
    os << "counters.ctc = " << counters.ctc_terms << '\n';
    os << "counters.interctc = " << counters.interctc_terms << '\n';
    os << "counters.kl_final = " << counters.kl_final_terms << '\n';
    os << "counters.kl_tap = " << counters.kl_tap_terms << '\n';
    os << "best_epoch = " << best_epoch << '\n';
    os << "best_dev_ctc = " << detail::format_double(best_dev_ctc) << '\n';
    os << "checkpoint = " << checkpoint << '\n';
    for (const EpochRecord& e : epochs)
      os << "epoch " << e.epoch << " total=" << detail::format_double(e.train_total)
         << " ctc=" << detail::format_double(e.train_ctc)
         << " interctc=" << detail::format_double(e.train_interctc)
         << " kl_final=" << detail::format_double(e.train_kl_final)
         << " kl_tap=" << detail::format_double(e.train_kl_tap)
         << " dev_ctc=" << detail::format_double(e.dev_ctc) << '\n';
  }

  static RunLedger load(const std::string& path) {
    std::ifstream is(path);
    check_state(is.good(), "ledger: cannot read ", path);
    RunLedger led;
    led.best_dev_ctc = std::numeric_limits<double>::infinity();
    std::string line;
    bool magic = false;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (line[0] == '#') {
        if (line.find("ctckd-run") != std::string::npos) magic = true;
        continue;
      }
      if (line.rfind("epoch ", 0) == 0) {
        std::istringstream ls(line);
        std::string word;
        ls >> word;  // "epoch"
        EpochRecord e;
        ls >> e.epoch;
        while (ls >> word) {
          const size_t eq = word.find('=');
          check_state(eq != std::string::npos, "ledger: bad epoch field '", word, "'");
          const std::string key = word.substr(0, eq);
          const double val = detail::parse_double(key, word.substr(eq + 1));
          if (key == "total") e.train_total = val;
          else if (key == "ctc") e.train_ctc = val;
          else if (key == "interctc") e.train_interctc = val;
          else if (key == "kl_final") e.train_kl_final = val;
          else if (key == "kl_tap") e.train_kl_tap = val;
          else if (key == "dev_ctc") e.dev_ctc = val;
          else check_state(false, "ledger: unknown epoch field '", key, "'");
        }
        led.epochs.push_back(e);
        continue;
      }
      const size_t eq = line.find('=');
      check_state(eq != std::string::npos, "ledger: bad line '", line, "'");
      auto trim = [](std::string s) {
        const size_t a = s.find_first_not_of(" \t");
        const size_t b = s.find_last_not_of(" \t");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      const std::string key = trim(line.substr(0, eq));
      const std::string raw = trim(line.substr(eq + 1));
      if (key == "variant") led.variant = raw;
      else if (key == "seed") led.seed = detail::parse_uint(key, raw);
      else if (key == "taps") {
        std::istringstream ts(raw);
        std::string item;
        while (std::getline(ts, item, ','))
          if (!item.empty()) led.taps.push_back(static_cast<int>(detail::parse_int(key, item)));
      } else if (key == "alpha") led.alpha = detail::parse_double(key, raw);
      else if (key == "beta") led.beta = detail::parse_double(key, raw);
      else if (key == "k") led.k = static_cast<int>(detail::parse_int(key, raw));
      else if (key == "interctc_weight") led.interctc_weight = detail::parse_double(key, raw);
      else if (key == "counters.ctc") led.counters.ctc_terms = detail::parse_int(key, raw);
      else if (key == "counters.interctc") led.counters.interctc_terms = detail::parse_int(key, raw);
      else if (key == "counters.kl_final") led.counters.kl_final_terms = detail::parse_int(key, raw);
      else if (key == "counters.kl_tap") led.counters.kl_tap_terms = detail::parse_int(key, raw);
      else if (key == "best_epoch") led.best_epoch = static_cast<int>(detail::parse_int(key, raw));
      else if (key == "best_dev_ctc") led.best_dev_ctc = detail::parse_double(key, raw);
      else if (key == "checkpoint") led.checkpoint = raw;
      else check_state(false, "ledger: unknown key '", key, "'");
    }
    check_state(magic, "ledger: ", path, " is not a run ledger");
    check_state(!led.variant.empty(), "ledger: ", path, " has no variant");
    return led;
  }
};

// ---------------------------------------------------------------------------
// Student training
// ---------------------------------------------------------------------------

inline double dev_ctc_mean(const AsrModel& model, const CorpusManifest& man,
                           const std::vector<Tensor>& feats) {
  check_arg(!man.records.empty(), "dev: empty manifest");
  check_arg(man.records.size() == feats.size(), "dev: feature/manifest mismatch");
  TrainContext ctx;
  double sum = 0.0;
  for (size_t i = 0; i < man.records.size(); i++) {
    EncoderOutput eo = model.encoder.forward(feats[i], {}, ctx);
    sum += ctc_loss(model.encoder.ctc_head(eo.final), man.records[i].transcript,
                    model.vocab.blank_id())
               .item();
  }
  return sum / static_cast<double>(man.records.size());
}

inline RunLedger train_asr(const ExperimentConfig& cfg, Variant variant,
                           const std::string& run_dir, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  CorpusPaths paths{cfg.corpus_dir};
  check_state(fs::exists(paths.vocab()), "train-asr: corpus not found under ",
              cfg.corpus_dir, " (run gen-data first)");
  Vocab vocab = Vocab::load(paths.vocab());
  SplitData train = load_split(paths, "train", vocab);
  SplitData dev = load_split(paths, "dev", vocab);
  check_state(!train.man.records.empty(), "train-asr: empty training manifest");
  check_state(train.feats[0].dim(1) == cfg.corpus.feature_dim,
              "train-asr: corpus features have dim ", train.feats[0].dim(1),
              " but config says ", cfg.corpus.feature_dim);

  DistillWeights weights = variant_weights(cfg, variant);
  const bool use_kd = variant != Variant::kCtc;
  const bool use_interctc = variant == Variant::kInterCtcInterAedKd;
  const int64_t m_taps = static_cast<int64_t>(weights.taps.size());

  std::map<std::string, const SoftLabelSet*> soft_by_id;
  SoftLabelCache cache;
  if (use_kd) {
    check_state(fs::exists(paths.soft_labels()), "train-asr: variant ",
                variant_name(variant), " needs the soft-label cache at ",
                paths.soft_labels(), " (run train-teacher first)");
    cache = load_soft_label_cache(paths.soft_labels());
    check_state(cache.k == weights.k, "train-asr: soft-label cache holds K=", cache.k,
                " but config wants K=", weights.k);
    for (const SoftLabelSet& s : cache.sets) soft_by_id[s.sequence_id] = &s;
  }

  AsrModel model(cfg, vocab);
  Adam opt(cfg.opt);
  std::mt19937_64 drop_rng(mix_seed(cfg.seed, 0xd20b0c7));
  TrainContext train_ctx;
  train_ctx.training = true;
  train_ctx.dropout = cfg.encoder.dropout;
  train_ctx.rng = &drop_rng;
  TrainContext dec_ctx = train_ctx;  // decoders regularize independently
  dec_ctx.dropout = cfg.decoder.dropout;

  RunLedger ledger;
  ledger.variant = variant_name(variant);
  ledger.seed = cfg.seed;
  ledger.taps = weights.taps;
  ledger.alpha = weights.alpha;
  ledger.beta = weights.beta;
  ledger.k = weights.k;
  ledger.interctc_weight = use_interctc ? cfg.interctc_weight : 0.0;

  fs::create_directories(run_dir);
  const int blank = vocab.blank_id();
  std::vector<size_t> order(train.man.records.size());
  for (size_t i = 0; i < order.size(); i++) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; epoch++) {
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 7000 + static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(cfg.batch)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch));
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (size_t bi = start; bi < stop; bi++) {
        const UtteranceRecord& utt = train.man.records[order[bi]];
        Tape tape;
        TapeScope scope(tape);
        EncoderOutput eo = model.encoder.forward(train.feats[order[bi]], weights.taps,
                                                 train_ctx);
        Tensor objective = ctc_loss(model.encoder.ctc_head(eo.final), utt.transcript,
                                    blank);
        ledger.counters.ctc_terms++;
        rec.train_ctc += objective.item();
        if (use_interctc) {
          Tensor inter;
          for (size_t ti = 0; ti < eo.taps.size(); ti++) {
            Tensor tap_loss = ctc_loss(model.encoder.ctc_head(eo.taps[ti]),
                                       utt.transcript, blank);
            ledger.counters.interctc_terms++;
            inter = ti == 0 ? tap_loss : add(inter, tap_loss);
          }
          inter = scale(inter, 1.0 / static_cast<double>(eo.taps.size()));
          rec.train_interctc += inter.item();
          objective = inter_ctc_combine(objective, inter, cfg.interctc_weight);
        }
        if (use_kd) {
          auto it = soft_by_id.find(utt.id);
          check_state(it != soft_by_id.end(), "train-asr: no soft labels for utterance ",
                      utt.id, " (regenerate with train-teacher)");
          const SoftLabelSet& soft = *it->second;
          check_state(soft.positions.size() == utt.transcript.size(),
                      "train-asr: soft labels for ", utt.id, " cover ",
                      soft.positions.size(), " positions, transcript has ",
                      utt.transcript.size());
          const std::vector<int> hist =
              teacher_forced_history(utt.transcript, model.decoder.start_id());
          Tensor kl_final = kl_loss(model.decoder.forward(hist, eo.final, dec_ctx),
                                    soft.positions);
          ledger.counters.kl_final_terms++;
          rec.train_kl_final += kl_final.item();
          std::vector<Tensor> tap_kls;
          tap_kls.reserve(eo.taps.size());
          for (const Tensor& tap : eo.taps) {
            tap_kls.push_back(
                kl_loss(model.decoder.forward(hist, tap, dec_ctx), soft.positions));
            ledger.counters.kl_tap_terms++;
            rec.train_kl_tap += tap_kls.back().item();
          }
          objective = total_loss(objective, distill_loss(kl_final, tap_kls, weights),
                                 weights.alpha);
        }
        rec.train_total += objective.item();
        tape.backward(scale(objective, inv));
      }
      opt.step(model.params);
    }
    const double n = static_cast<double>(order.size());
    rec.train_total /= n;
    rec.train_ctc /= n;
    rec.train_interctc /= n;
    rec.train_kl_final /= n;
    rec.train_kl_tap /= (m_taps > 0 ? n * static_cast<double>(m_taps) : 1.0);
    rec.dev_ctc = dev_ctc_mean(model, dev.man, dev.feats);
    ledger.epochs.push_back(rec);
    if (rec.dev_ctc < ledger.best_dev_ctc) {
      ledger.best_dev_ctc = rec.dev_ctc;
      ledger.best_epoch = epoch;
      save_checkpoint(model.params, run_dir + "/" + ledger.checkpoint);
    }
    if (log)
      *log << variant_name(variant) << " epoch " << epoch << " train " << rec.train_total
           << " dev_ctc " << rec.dev_ctc << '\n';
  }

  // Each variant must have produced exactly its own loss terms; a stray KL
  // or interCTC term would corrupt the comparison.
  const int64_t utts = static_cast<int64_t>(order.size()) * cfg.epochs;
  check_state(ledger.counters.ctc_terms == utts, "train-asr: ctc term count ",
              ledger.counters.ctc_terms, " != ", utts);
  check_state(ledger.counters.interctc_terms == (use_interctc ? utts * m_taps : 0),
              "train-asr: interctc term count off for ", variant_name(variant));
  check_state(ledger.counters.kl_final_terms == (use_kd ? utts : 0),
              "train-asr: final KL term count off for ", variant_name(variant));
  check_state(ledger.counters.kl_tap_terms == (use_kd ? utts * m_taps : 0),
              "train-asr: tap KL term count off for ", variant_name(variant));

  ledger.save(run_dir + "/ledger.txt");
  cfg.save(run_dir + "/config.txt");
  return ledger;
}

inline AsrModel load_asr_model(const ExperimentConfig& cfg, const std::string& run_dir) {
  CorpusPaths paths{cfg.corpus_dir};
  Vocab vocab = Vocab::load(paths.vocab());
  RunLedger ledger = RunLedger::load(run_dir + "/ledger.txt");
  AsrModel model(cfg, vocab);
  assign_params(model.params, load_checkpoint(run_dir + "/" + ledger.checkpoint));
  return model;
}

// ---------------------------------------------------------------------------
// Decoding and evaluation
// ---------------------------------------------------------------------------

struct DecodeRun {
  std::string split;
  std::string mode_tag;  // "greedy" or "beam<N>"
  double rtf = 0.0;
  std::vector<std::pair<std::string, std::vector<int>>> hyps;
};

// Times the full per-utterance pipeline (encoder + search); the attention
// decoder never runs here, so CTC inference is identical with or without it.
inline DecodeRun decode_manifest(const AsrModel& model, const CorpusManifest& man,
                                 const std::vector<Tensor>& feats,
                                 const std::string& split, const std::string& mode,
                                 const BeamConfig& beam_cfg, size_t warmup = 2) {
  check_arg(mode == "greedy" || mode == "beam", "decode: mode must be greedy or beam");
  check_arg(man.records.size() == feats.size(), "decode: feature/manifest mismatch");
  check_arg(!man.records.empty(), "decode: empty manifest");
  TrainContext ctx;
  const int blank = model.vocab.blank_id();
  DecodeRun run;
  run.split = split;
  run.mode_tag = mode == "greedy" ? "greedy" : str_cat("beam", beam_cfg.beam);
  run.hyps.resize(man.records.size());
  std::vector<int64_t> frame_counts(man.records.size());
  for (size_t i = 0; i < feats.size(); i++) frame_counts[i] = feats[i].dim(0);
  auto decode_one = [&](size_t i) {
    EncoderOutput eo = model.encoder.forward(feats[i], {}, ctx);
    Tensor logits = model.encoder.ctc_head(eo.final);
    std::vector<int> hyp;
    if (mode == "greedy") hyp = ctc_greedy_decode(logits, blank);
    else hyp = prefix_beam_search(log_softmax(logits, 1), beam_cfg).front().prefix;
    run.hyps[i] = {man.records[i].id, std::move(hyp)};
  };
  run.rtf = measure_rtf(decode_one, frame_counts, {},
                        std::min(warmup, man.records.size() - 1));
  return run;
}

inline void save_hypotheses(const DecodeRun& run, const std::string& path) {
  std::ofstream os(path);
  check_state(os.good(), "decode: cannot write ", path);
  os << "# ctckd-hyp v1\n";
  os << "# split " << run.split << '\n';
  os << "# mode " << run.mode_tag << '\n';
  os << "# rtf " << detail::format_double(run.rtf) << '\n';
  for (const auto& [id, toks] : run.hyps) {
    os << id << '\t';
    for (size_t j = 0; j < toks.size(); j++) os << (j ? " " : "") << toks[j];
    os << '\n';
  }
}

inline DecodeRun load_hypotheses(const std::string& path) {
  std::ifstream is(path);
  check_state(is.good(), "eval: cannot read ", path);
  DecodeRun run;
  std::string line;
  bool magic = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key;
      hs >> key;
      if (key == "ctckd-hyp") magic = true;
      else if (key == "split") hs >> run.split;
      else if (key == "mode") hs >> run.mode_tag;
      else if (key == "rtf") hs >> run.rtf;
      continue;
    }
    const size_t tab = line.find('\t');
    check_state(tab != std::string::npos, "eval: malformed hypothesis line '", line, "'");
    std::vector<int> toks;
    std::istringstream ts(line.substr(tab + 1));
    int t;
    while (ts >> t) toks.push_back(t);
    run.hyps.emplace_back(line.substr(0, tab), std::move(toks));
  }
  check_state(magic, "eval: ", path, " is not a hypothesis file");
  check_state(!run.split.empty() && !run.mode_tag.empty(), "eval: ", path,
              " lacks split/mode headers");
  return run;
}

struct EvalResult {
  std::string split;
  std::string system;
  std::string mode;
  WerBreakdown agg;
  double rtf = 0.0;
};

inline EvalResult evaluate_hypotheses(const DecodeRun& run, const CorpusManifest& man,
                                      const std::string& system) {
  check_state(run.hyps.size() == man.records.size(), "eval: ", run.hyps.size(),
              " hypotheses for ", man.records.size(), " references");
  std::map<std::string, const std::vector<int>*> refs;
  for (const UtteranceRecord& r : man.records) refs[r.id] = &r.transcript;
  EvalResult res;
  res.split = run.split;
  res.system = system;
  res.mode = run.mode_tag;
  res.rtf = run.rtf;
  std::set<std::string> seen;
  for (const auto& [id, hyp] : run.hyps) {
    auto it = refs.find(id);
    check_state(it != refs.end(), "eval: hypothesis for unknown utterance ", id);
    check_state(seen.insert(id).second, "eval: duplicate hypothesis for ", id);
    res.agg += wer(*it->second, hyp);
  }
  return res;
}

inline void append_metrics_row(const std::string& run_dir, const EvalResult& res) {
  namespace fs = std::filesystem;
  const std::string path = run_dir + "/metrics.tsv";
  const bool fresh = !fs::exists(path);
  std::ofstream os(path, std::ios::app);
  check_state(os.good(), "eval: cannot write ", path);
  if (fresh) os << metrics_tsv_header() << '\n';
  os << metrics_tsv_row(res.split, res.system, res.mode, res.agg, res.rtf) << '\n';
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct MetricsRow {
  std::string split;
  std::string system;
  std::string mode;
  double wer = 0.0;  // percent
  int64_t sub = 0, ins = 0, del = 0;
  double rtf = 0.0;
};

inline std::vector<MetricsRow> load_metrics(const std::string& path) {
  std::ifstream is(path);
  check_state(is.good(), "report: cannot read ", path);
  std::string line;
  check_state(std::getline(is, line) && line == metrics_tsv_header(),
              "report: bad metrics header in ", path);
  std::vector<MetricsRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    MetricsRow r;
    std::string f[8];
    for (int i = 0; i < 8; i++)
      check_state(static_cast<bool>(std::getline(ls, f[i], '\t')),
                  "report: short metrics row in ", path);
    r.split = f[0];
    r.system = f[1];
    r.mode = f[2];
    r.wer = detail::parse_double("wer", f[3]);
    r.sub = detail::parse_int("sub", f[4]);
    r.ins = detail::parse_int("ins", f[5]);
    r.del = detail::parse_int("del", f[6]);
    r.rtf = detail::parse_double("rtf", f[7]);
    rows.push_back(r);
  }
  return rows;
}

namespace detail {

inline int split_rank(const std::string& s) {
  if (s == "dev") return 0;
  if (s == "test") return 1;
  if (s == "train") return 2;
  return 3;
}

inline std::pair<int, long> mode_rank(const std::string& m) {
  if (m == "greedy") return {0, 0};
  if (m.rfind("beam", 0) == 0) return {1, std::strtol(m.c_str() + 4, nullptr, 10)};
  return {2, 0};
}

inline int variant_rank(const std::string& v) {
  if (v == "ctc") return 0;
  if (v == "aed-kd") return 1;
  if (v == "interaed-kd") return 2;
  if (v == "interctc-interaed-kd") return 3;
  return 4;
}

}  // namespace detail

// Rendered WER comparison across run directories. RTF is deliberately left
// out of the table (wall-clock timings are not reproducible); pass
// with_rtf=true to append per-column RTF rows underneath.
struct Report {
  std::string table;
  std::vector<std::string> missing;

  std::string text() const {
    std::string out = table;
    for (const std::string& m : missing) out += "missing: " + m + "\n";
    return out;
  }
};

inline Report render_report(const std::vector<std::string>& run_dirs,
                            bool with_rtf = false) {
  namespace fs = std::filesystem;
  using ColKey = std::pair<std::string, std::string>;  // split, mode
  struct Row {
    std::string variant;
    uint64_t seed = 0;
    std::string label;
    std::map<ColKey, MetricsRow> cells;
  };
  Report rep;
  std::vector<Row> rows;
  for (const std::string& dir : run_dirs) {
    if (!fs::exists(dir + "/ledger.txt")) {
      rep.missing.push_back(dir + " (no ledger.txt)");
      continue;
    }
    RunLedger led = RunLedger::load(dir + "/ledger.txt");
    if (!fs::exists(dir + "/metrics.tsv")) {
      rep.missing.push_back(dir + " (no metrics.tsv)");
      continue;
    }
    Row row;
    row.variant = led.variant;
    row.seed = led.seed;
    for (const MetricsRow& m : load_metrics(dir + "/metrics.tsv"))
      row.cells[{m.split, m.mode}] = m;  // later eval rows win
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    const int ra = detail::variant_rank(a.variant), rb = detail::variant_rank(b.variant);
    if (ra != rb) return ra < rb;
    if (a.variant != b.variant) return a.variant < b.variant;
    return a.seed < b.seed;
  });
  std::map<std::string, int> variant_count;
  for (const Row& r : rows) variant_count[r.variant]++;
  for (Row& r : rows)
    r.label = variant_count[r.variant] > 1 ? str_cat(r.variant, "/seed", r.seed)
                                           : r.variant;

  auto col_less = [](const ColKey& a, const ColKey& b) {
    const int sa = detail::split_rank(a.first), sb = detail::split_rank(b.first);
    if (sa != sb) return sa < sb;
    if (a.first != b.first) return a.first < b.first;
    const auto ma = detail::mode_rank(a.second), mb = detail::mode_rank(b.second);
    if (ma != mb) return ma < mb;
    return a.second < b.second;
  };
  std::set<ColKey, decltype(col_less)> cols(col_less);
  for (const Row& r : rows)
    for (const auto& kv : r.cells) cols.insert(kv.first);

  // Baseline for the relative-error-reduction column: the ctc row's
  // dev/greedy WER.
  const Row* base_row = nullptr;
  for (const Row& r : rows)
    if (r.variant == "ctc") {
      base_row = &r;
      break;
    }
  const ColKey base_key{"dev", "greedy"};
  double base_wer = -1.0;
  if (base_row != nullptr) {
    auto it = base_row->cells.find(base_key);
    if (it != base_row->cells.end() && it->second.wer > 0.0) base_wer = it->second.wer;
  }

  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"system"};
  for (const ColKey& c : cols) header.push_back(c.first + "/" + c.second);
  if (base_wer > 0.0) header.push_back("werr%");
  grid.push_back(header);
  for (const Row& r : rows) {
    std::vector<std::string> line{r.label};
    for (const ColKey& c : cols) {
      auto it = r.cells.find(c);
      if (it == r.cells.end()) {
        line.push_back("-");
      } else {
        std::ostringstream v;
        v << std::fixed << std::setprecision(2) << it->second.wer;
        line.push_back(v.str());
      }
    }
    if (base_wer > 0.0) {
      auto it = r.cells.find(base_key);
      if (it == r.cells.end()) {
        line.push_back("-");
      } else {
        std::ostringstream v;
        v << std::fixed << std::setprecision(1)
          << 100.0 * (base_wer - it->second.wer) / base_wer;
        line.push_back(v.str());
      }
    }
    grid.push_back(std::move(line));
  }
  if (with_rtf) {
    for (const Row& r : rows) {
      std::vector<std::string> line{r.label + " (rtf)"};
      for (const ColKey& c : cols) {
        auto it = r.cells.find(c);
        if (it == r.cells.end()) {
          line.push_back("-");
        } else {
          std::ostringstream v;
          v << std::fixed << std::setprecision(4) << it->second.rtf;
          line.push_back(v.str());
        }
      }
      if (base_wer > 0.0) line.push_back("-");
      grid.push_back(std::move(line));
    }
  }

  std::vector<size_t> width(grid[0].size(), 0);
  for (const auto& line : grid)
    for (size_t i = 0; i < line.size(); i++) width[i] = std::max(width[i], line[i].size());
  std::ostringstream os;
  os << "# wer (%) by split/decode mode";
  if (!with_rtf) os << "; rtf lives in each run's metrics.tsv";
  os << '\n';
  for (const auto& line : grid) {
    for (size_t i = 0; i < line.size(); i++) {
      if (i == 0) os << std::left << std::setw(static_cast<int>(width[0])) << line[i];
      else os << "  " << std::right << std::setw(static_cast<int>(width[i])) << line[i];
    }
    os << '\n';
  }
  rep.table = os.str();
  return rep;
}

}  // namespace ctckd
