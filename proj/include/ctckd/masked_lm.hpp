#pragma once

// Masked-LM teacher: a small bidirectional Transformer trained to predict a
// masked token from both-side context, plus per-position top-K soft-label
// extraction. Masking replaces the chosen tokens with [MASK] outright, and
// every extraction masks exactly one position at a time with the sentence
// wrapped in [CLS]/[SEP]. Soft labels keep the K largest base-vocabulary
// probabilities, renormalized to a proper distribution over the kept
// support. The teacher is frozen during recognizer training; its parameter
// hash keys the on-disk soft-label cache.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "ctckd/common.hpp"
#include "ctckd/nn.hpp"
#include "ctckd/optim.hpp"
#include "ctckd/tensor.hpp"
#include "ctckd/vocab.hpp"

namespace ctckd {

struct TeacherConfig {
  int layers = 4;
  int dim = 64;
  int heads = 4;
  int ff_dim = 256;
  double dropout = 0.0;

  void validate() const {
    check_arg(layers >= 1, "teacher: need at least one layer");
    check_arg(dim % heads == 0, "teacher: dim ", dim, " not divisible by ", heads, " heads");
  }
};

class MaskedLm {
 public:
  MaskedLm() = default;
  MaskedLm(const TeacherConfig& cfg, int lm_vocab, std::mt19937_64& rng)
      : cfg_(cfg), lm_vocab_(lm_vocab), embed_(lm_vocab, cfg.dim, rng),
        final_norm_(cfg.dim) {
    cfg.validate();
    blocks_.reserve(static_cast<size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; l++)
      blocks_.emplace_back(cfg.dim, cfg.heads, cfg.ff_dim, rng);
    out_proj_ = Linear(cfg.dim, lm_vocab, rng);
  }

  int lm_vocab() const { return lm_vocab_; }
  const TeacherConfig& config() const { return cfg_; }

  // tokens are LM-space ids (base tokens plus specials); returns T x |V_lm|
  // pre-softmax logits.
  Tensor forward(const std::vector<int>& tokens, const TrainContext& ctx) const {
    check_arg(!tokens.empty(), "teacher: empty input");
    for (int t : tokens)
      check_arg(t >= 0 && t < lm_vocab_, "teacher: token id ", t, " outside LM vocab");
    Tensor h = apply_dropout(add_positions(embed_(tokens)), ctx);
    for (const TransformerBlock& b : blocks_) h = b(h, ctx);
    return out_proj_(final_norm_(h));
  }

  void register_params(ParamMap& params, const std::string& prefix = "teacher") {
    embed_.register_params(params, prefix + ".embed");
    for (size_t l = 0; l < blocks_.size(); l++)
      blocks_[l].register_params(params, str_cat(prefix, ".block", l + 1));
    final_norm_.register_params(params, prefix + ".final_norm");
    out_proj_.register_params(params, prefix + ".out_proj");
  }

 private:
  TeacherConfig cfg_;
  int lm_vocab_ = 0;
  Embedding embed_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_norm_;
  Linear out_proj_;
};

// [CLS] + sentence + [SEP] in LM-token space.
inline std::vector<int> wrap_sentence(const std::vector<int>& sentence, const Vocab& vocab) {
  std::vector<int> wrapped;
  wrapped.reserve(sentence.size() + 2);
  wrapped.push_back(vocab.cls_id());
  for (int t : sentence) {
    check_arg(t >= 0 && t < vocab.base_size(), "teacher: transcript token ", t,
              " outside base vocab");
    wrapped.push_back(t);
  }
  wrapped.push_back(vocab.sep_id());
  return wrapped;
}

struct MlmTrainConfig {
  int epochs = 12;
  int batch = 16;
  double mask_rate = 0.15;
  uint64_t seed = 1;
  OptimizerConfig opt;
};

struct MlmTrainStats {
  std::vector<double> epoch_losses;  // mean per-position CE per epoch
  double heldout_accuracy = 0.0;     // masked top-1 over base vocab
};

// Single-position masked argmax over the base vocabulary (specials never
// predicted). Position is an index into the unwrapped sentence.
inline int masked_argmax(const MaskedLm& teacher, const std::vector<int>& sentence,
                         size_t position, const Vocab& vocab) {
  std::vector<int> input = wrap_sentence(sentence, vocab);
  input[position + 1] = vocab.mask_id();
  Tensor logits = teacher.forward(input, TrainContext::eval());
  const double* row = logits.data() + static_cast<int64_t>(position + 1) * vocab.lm_size();
  int arg = 0;
  for (int k = 1; k < vocab.base_size(); k++)
    if (row[k] > row[arg]) arg = k;
  return arg;
}

inline double masked_accuracy(const MaskedLm& teacher,
                              const std::vector<std::vector<int>>& sentences,
                              const Vocab& vocab) {
  int64_t total = 0, hit = 0;
  for (const std::vector<int>& s : sentences)
    for (size_t u = 0; u < s.size(); u++) {
      total++;
      if (masked_argmax(teacher, s, u, vocab) == s[u]) hit++;
    }
  check_arg(total > 0, "teacher: no positions to score");
  return static_cast<double>(hit) / static_cast<double>(total);
}

// Masked-prediction training: per sentence, each position is masked with
// probability mask_rate (at least one position always), cross-entropy on
// masked positions only.
inline MlmTrainStats mlm_train(MaskedLm& teacher, ParamMap& params,
                               const std::vector<std::vector<int>>& train_text,
                               const std::vector<std::vector<int>>& heldout_text,
                               const Vocab& vocab, const MlmTrainConfig& cfg) {
  check_arg(!train_text.empty(), "teacher: empty training corpus");
  check_arg(cfg.mask_rate > 0.0 && cfg.mask_rate < 1.0, "teacher: bad mask rate");
  Adam opt(cfg.opt);
  MlmTrainStats stats;
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x313131));
  TrainContext ctx;
  ctx.training = true;
  ctx.dropout = teacher.config().dropout;
  ctx.rng = &rng;
  const int lm_v = vocab.lm_size();

  for (int epoch = 0; epoch < cfg.epochs; epoch++) {
    double epoch_loss = 0.0;
    int64_t epoch_positions = 0;
    int in_batch = 0;
    std::vector<size_t> order(train_text.size());
    for (size_t i = 0; i < order.size(); i++) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t si = 0; si < order.size(); si++) {
      const std::vector<int>& sentence = train_text[order[si]];
      if (sentence.empty()) continue;
      std::vector<int> input = wrap_sentence(sentence, vocab);
      std::vector<int64_t> target_flat;
      std::bernoulli_distribution coin(cfg.mask_rate);
      std::vector<size_t> masked;
      for (size_t u = 0; u < sentence.size(); u++)
        if (coin(rng)) masked.push_back(u);
      if (masked.empty())
        masked.push_back(rng() % sentence.size());
      for (size_t u : masked) {
        input[u + 1] = vocab.mask_id();
        target_flat.push_back(static_cast<int64_t>(u + 1) * lm_v + sentence[u]);
      }
      Tape tape;
      {
        TapeScope scope(tape);
        Tensor logits = teacher.forward(input, ctx);
        Tensor picked = take(log_softmax(logits), target_flat);
        Tensor loss = scale(sum(picked), -1.0 / static_cast<double>(target_flat.size()));
        tape.backward(loss);
        epoch_loss += loss.item() * static_cast<double>(target_flat.size());
        epoch_positions += static_cast<int64_t>(target_flat.size());
      }
      if (++in_batch == cfg.batch || si + 1 == order.size()) {
        opt.step(params);
        in_batch = 0;
      }
    }
    stats.epoch_losses.push_back(epoch_loss / static_cast<double>(epoch_positions));
  }
  if (!heldout_text.empty()) stats.heldout_accuracy = masked_accuracy(teacher, heldout_text, vocab);
  return stats;
}

// --- soft labels ---

struct SoftLabelPosition {
  std::vector<int> ids;        // descending probability, ties by id
  std::vector<double> probs;   // renormalized over the kept support
};

struct SoftLabelSet {
  std::string sequence_id;
  int k = 0;
  std::vector<SoftLabelPosition> positions;  // one per sentence position
};

// U teacher passes: position u is masked individually and the teacher's
// base-vocabulary distribution at u is truncated to the top K and
// renormalized.
inline SoftLabelSet extract_soft_labels(const std::vector<int>& sentence,
                                        const MaskedLm& teacher, const Vocab& vocab, int k,
                                        const std::string& sequence_id = "") {
  check_arg(!sentence.empty(), "soft-labels: empty sentence");
  check_arg(k >= 1, "soft-labels: K must be positive");
  SoftLabelSet set;
  set.sequence_id = sequence_id;
  set.k = k;
  const int base = vocab.base_size();
  const int lm_v = vocab.lm_size();
  const int kept = std::min(k, base);
  for (size_t u = 0; u < sentence.size(); u++) {
    std::vector<int> input = wrap_sentence(sentence, vocab);
    input[u + 1] = vocab.mask_id();
    Tensor logits = teacher.forward(input, TrainContext::eval());
    const double* row = logits.data() + static_cast<int64_t>(u + 1) * lm_v;
    // softmax over the full LM vocabulary, then restrict to base tokens
    double mx = row[0];
    for (int j = 1; j < lm_v; j++) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < lm_v; j++) z += std::exp(row[j] - mx);
    std::vector<std::pair<double, int>> scored(static_cast<size_t>(base));
    for (int j = 0; j < base; j++) scored[static_cast<size_t>(j)] = {std::exp(row[j] - mx) / z, j};
    std::partial_sort(scored.begin(), scored.begin() + kept, scored.end(),
                      [](const auto& a, const auto& b) {
                        return a.first != b.first ? a.first > b.first : a.second < b.second;
                      });
    SoftLabelPosition pos;
    double total = 0.0;
    for (int j = 0; j < kept; j++) total += scored[static_cast<size_t>(j)].first;
    check_state(total > 0.0, "soft-labels: degenerate teacher distribution");
    for (int j = 0; j < kept; j++) {
      pos.ids.push_back(scored[static_cast<size_t>(j)].second);
      pos.probs.push_back(scored[static_cast<size_t>(j)].first / total);
    }
    set.positions.push_back(std::move(pos));
  }
  return set;
}

// --- binary soft-label cache: header (K, teacher hash), then per-sequence
// records. Harness skips extraction when the stored hash matches. ---

inline void save_soft_label_cache(const std::vector<SoftLabelSet>& sets, int k,
                                  uint64_t teacher_hash, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  check_state(os.good(), "soft-cache: cannot write ", path);
  os.write("CTCKDSL1", 8);
  auto put_u64 = [&](uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); };
  auto put_u32 = [&](uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  put_u32(static_cast<uint32_t>(k));
  put_u64(teacher_hash);
  put_u64(sets.size());
  for (const SoftLabelSet& s : sets) {
    check_arg(s.k == k, "soft-cache: mixed K in cache");
    put_u32(static_cast<uint32_t>(s.sequence_id.size()));
    os.write(s.sequence_id.data(), static_cast<std::streamsize>(s.sequence_id.size()));
    put_u32(static_cast<uint32_t>(s.positions.size()));
    for (const SoftLabelPosition& p : s.positions) {
      put_u32(static_cast<uint32_t>(p.ids.size()));
      for (int id : p.ids) put_u32(static_cast<uint32_t>(id));
      os.write(reinterpret_cast<const char*>(p.probs.data()),
               static_cast<std::streamsize>(8 * p.probs.size()));
    }
  }
  check_state(os.good(), "soft-cache: write failed for ", path);
}

struct SoftLabelCache {
  int k = 0;
  uint64_t teacher_hash = 0;
  std::vector<SoftLabelSet> sets;
};

inline SoftLabelCache load_soft_label_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check_state(is.good(), "soft-cache: cannot read ", path);
  char magic[8];
  is.read(magic, 8);
  check_state(is.gcount() == 8 && std::string(magic, 8) == "CTCKDSL1",
              "soft-cache: bad magic in ", path);
  auto get_u64 = [&] {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    check_state(is.good(), "soft-cache: truncated ", path);
    return v;
  };
  auto get_u32 = [&] {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    check_state(is.good(), "soft-cache: truncated ", path);
    return v;
  };
  SoftLabelCache cache;
  cache.k = static_cast<int>(get_u32());
  cache.teacher_hash = get_u64();
  const uint64_t count = get_u64();
  cache.sets.resize(count);
  for (SoftLabelSet& s : cache.sets) {
    s.k = cache.k;
    const uint32_t id_len = get_u32();
    s.sequence_id.resize(id_len);
    is.read(s.sequence_id.data(), id_len);
    const uint32_t n_pos = get_u32();
    s.positions.resize(n_pos);
    for (SoftLabelPosition& p : s.positions) {
      const uint32_t n = get_u32();
      p.ids.resize(n);
      for (uint32_t i = 0; i < n; i++) p.ids[i] = static_cast<int>(get_u32());
      p.probs.resize(n);
      is.read(reinterpret_cast<char*>(p.probs.data()), 8 * n);
      check_state(is.good(), "soft-cache: truncated ", path);
    }
  }
  return cache;
}

}  // namespace ctckd
