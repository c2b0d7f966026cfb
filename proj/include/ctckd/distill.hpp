#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ctckd/common.hpp"
#include "ctckd/masked_lm.hpp"
#include "ctckd/nn.hpp"
#include "ctckd/tensor.hpp"

namespace ctckd {

// ---------------------------------------------------------------------------
// Auxiliary attention decoder. One parameter set serves every encoder tap and
// the final layer; it exists only for training-time distillation (plus a
// diagnostic greedy decode) and is never needed for CTC inference.
// ---------------------------------------------------------------------------

struct DecoderConfig {
  int layers = 3;
  int64_t dim = 64;
  int heads = 4;
  int64_t ff_dim = 256;
  double dropout = 0.0;

  void validate() const {
    check_arg(layers >= 1, "decoder: layers must be >= 1, got ", layers);
    check_arg(dim >= 1 && heads >= 1 && dim % heads == 0, "decoder: dim ", dim,
              " not divisible by ", heads, " heads");
    check_arg(ff_dim >= 1, "decoder: ff_dim must be >= 1, got ", ff_dim);
    check_arg(dropout >= 0.0 && dropout < 1.0, "decoder: bad dropout ", dropout);
  }
};

// Pre-norm decoder layer: causal self-attention, cross-attention onto encoder
// features, position-wise feed-forward.
struct DecoderLayer {
  LayerNorm self_norm, cross_norm, ffn_norm;
  MultiHeadAttention self_mha, cross_mha;
  FeedForward ffn;

  DecoderLayer() = default;
  DecoderLayer(int64_t dim, int heads, int64_t ff_dim, std::mt19937_64& rng)
      : self_norm(dim), cross_norm(dim), ffn_norm(dim), self_mha(dim, heads, rng),
        cross_mha(dim, heads, rng), ffn(dim, ff_dim, rng) {}

  Tensor operator()(const Tensor& x, const Tensor& enc, const TrainContext& ctx) const {
    Tensor sn = self_norm(x);
    Tensor u = add(x, apply_dropout(self_mha(sn, sn, /*causal=*/true), ctx));
    Tensor v = add(u, apply_dropout(cross_mha(cross_norm(u), enc), ctx));
    return add(v, apply_dropout(ffn(ffn_norm(v)), ctx));
  }

  void register_params(ParamMap& params, const std::string& prefix) {
    self_norm.register_params(params, prefix + ".self_norm");
    self_mha.register_params(params, prefix + ".self_mha");
    cross_norm.register_params(params, prefix + ".cross_norm");
    cross_mha.register_params(params, prefix + ".cross_mha");
    ffn_norm.register_params(params, prefix + ".ffn_norm");
    ffn.register_params(params, prefix + ".ffn");
  }
};

struct AttentionDecoder {
  DecoderConfig cfg;
  int64_t vocab = 0;  // base tokens + start + end
  Embedding emb;
  std::vector<DecoderLayer> layers;
  LayerNorm final_norm;
  Linear out_proj;

  AttentionDecoder() = default;
  AttentionDecoder(const DecoderConfig& config, int64_t base_vocab, std::mt19937_64& rng)
      : cfg(config), vocab(base_vocab + 2), emb(vocab, config.dim, rng),
        final_norm(config.dim), out_proj(config.dim, vocab, rng) {
    cfg.validate();
    check_arg(base_vocab >= 1, "decoder: base vocab must be >= 1, got ", base_vocab);
    layers.reserve(static_cast<size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; l++)
      layers.emplace_back(cfg.dim, cfg.heads, cfg.ff_dim, rng);
  }

  int start_id() const { return static_cast<int>(vocab - 2); }
  int end_id() const { return static_cast<int>(vocab - 1); }

  // Teacher-forced pass: one logit row per history position; row u scores the
  // token at position u+1 and, by the causal mask, sees history only up to u.
  Tensor forward(const std::vector<int>& history, const Tensor& enc,
                 const TrainContext& ctx) const {
    check_arg(!history.empty(), "decoder: empty history");
    check_arg(enc.ndim() == 2 && enc.dim(0) >= 1, "decoder: empty encoder features");
    check_arg(enc.dim(1) == cfg.dim, "decoder: encoder width ", enc.dim(1),
              " != decoder dim ", cfg.dim);
    for (int id : history)
      check_arg(id >= 0 && id < vocab, "decoder: history id ", id, " outside vocab ",
                vocab);
    Tensor h = add_positions(emb(history));
    for (const DecoderLayer& layer : layers) h = layer(h, enc, ctx);
    return out_proj(final_norm(h));
  }

  void register_params(ParamMap& params, const std::string& prefix = "dec") {
    emb.register_params(params, prefix + ".emb");
    for (size_t l = 0; l < layers.size(); l++)
      layers[l].register_params(params, str_cat(prefix, ".layer", l + 1));
    final_norm.register_params(params, prefix + ".final_norm");
    out_proj.register_params(params, prefix + ".out_proj");
  }
};

// Ground-truth transcript shifted right behind the start token.
inline std::vector<int> teacher_forced_history(const std::vector<int>& labels,
                                               int start_id) {
  check_arg(!labels.empty(), "teacher_forced_history: empty transcript");
  std::vector<int> history;
  history.reserve(labels.size());
  history.push_back(start_id);
  history.insert(history.end(), labels.begin(), labels.end() - 1);
  return history;
}

// Autoregressive greedy generation, stopping at the end token or max_len.
// The start token is never emitted.
inline std::vector<int> aed_greedy_decode(const AttentionDecoder& dec, const Tensor& enc,
                                          int max_len) {
  check_arg(max_len >= 0, "aed_greedy_decode: negative max_len");
  std::vector<int> history = {dec.start_id()};
  std::vector<int> out;
  for (int step = 0; step < max_len; step++) {
    Tensor logits = dec.forward(history, enc, TrainContext::eval());
    const int64_t last = logits.dim(0) - 1;
    int best = dec.end_id();
    double best_score = -std::numeric_limits<double>::infinity();
    for (int w = 0; w < dec.vocab; w++) {
      if (w == dec.start_id()) continue;
      const double s = logits.at(last, w);
      if (s > best_score) {
        best_score = s;
        best = w;
      }
    }
    if (best == dec.end_id()) break;
    out.push_back(best);
    history.push_back(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Distillation losses.
// ---------------------------------------------------------------------------

struct DistillWeights {
  double alpha = 0.7;
  double beta = 0.5;
  int k = 10;
  std::vector<int> taps;  // encoder tap layers; M = taps.size()

  int m() const { return static_cast<int>(taps.size()); }

  void validate() const {
    check_arg(alpha >= 0.0 && alpha <= 1.0, "distill: alpha ", alpha, " outside [0,1]");
    check_arg(beta >= 0.0 && beta <= 1.0, "distill: beta ", beta, " outside [0,1]");
    check_arg(k >= 1, "distill: top-K must be >= 1, got ", k);
    check_arg(!taps.empty() || beta == 0.0,
              "distill: M = 0 (no taps) requires beta = 0, got ", beta);
  }
};

constexpr double kTeacherFloor = 1e-8;

// KL divergence between the student distribution restricted to the teacher's
// top-K support (renormalized by softmax over the gathered logits) and the
// floored teacher distribution. Default direction is student-led,
// sum_u sum_k q log(q / p); forward_kl swaps the roles.
inline Tensor kl_loss(const Tensor& student_logits,
                      const std::vector<SoftLabelPosition>& teacher,
                      bool forward_kl = false, double floor = kTeacherFloor) {
  check_arg(student_logits.ndim() == 2, "kl_loss: logits must be 2-D");
  const int64_t u_len = student_logits.dim(0);
  const int64_t width = student_logits.dim(1);
  check_arg(static_cast<int64_t>(teacher.size()) == u_len, "kl_loss: ", teacher.size(),
            " teacher positions vs ", u_len, " student rows");
  check_arg(u_len >= 1, "kl_loss: empty position list");
  const size_t k = teacher[0].ids.size();
  std::vector<int64_t> flat;
  std::vector<double> probs, logps;
  flat.reserve(teacher.size() * k);
  probs.reserve(teacher.size() * k);
  for (size_t u = 0; u < teacher.size(); u++) {
    const SoftLabelPosition& pos = teacher[u];
    check_arg(pos.ids.size() == k && pos.probs.size() == k,
              "kl_loss: ragged teacher support at position ", u);
    for (size_t i = 0; i < k; i++) {
      check_arg(pos.ids[i] >= 0 && pos.ids[i] < width, "kl_loss: support id ",
                pos.ids[i], " outside student vocab ", width);
      flat.push_back(static_cast<int64_t>(u) * width + pos.ids[i]);
      const double p = (1.0 - static_cast<double>(k) * floor) * pos.probs[i] + floor;
      probs.push_back(p);
      logps.push_back(std::log(p));
    }
  }
  const Shape support_shape{u_len, static_cast<int64_t>(k)};
  Tensor lq = log_softmax(reshape(take(student_logits, flat), support_shape), 1);
  Tensor lp = Tensor::from_values(support_shape, logps);
  if (forward_kl) {
    Tensor p = Tensor::from_values(support_shape, probs);
    return sum(mul(p, sub(lp, lq)));
  }
  Tensor q = exp(lq);
  return sum(mul(q, sub(lq, lp)));
}

// Weighted sum of the final-layer KL and the M intermediate KLs:
// (1 - beta) * final + (beta / M) * sum(inter).
inline Tensor distill_loss(const Tensor& final_kl, const std::vector<Tensor>& inter_kls,
                           const DistillWeights& weights) {
  weights.validate();
  check_arg(static_cast<int>(inter_kls.size()) == weights.m(), "distill_loss: got ",
            inter_kls.size(), " intermediate losses for M = ", weights.m());
  Tensor loss = scale(final_kl, 1.0 - weights.beta);
  for (const Tensor& inter : inter_kls)
    loss = add(loss, scale(inter, weights.beta / weights.m()));
  return loss;
}

// Overall training objective: (1 - alpha) * ctc + alpha * distill. With
// interCTC enabled the ctc argument is already the combined CTC term.
inline Tensor total_loss(const Tensor& ctc, const Tensor& distill, double alpha) {
  check_arg(alpha >= 0.0 && alpha <= 1.0, "total_loss: alpha ", alpha,
            " outside [0,1]");
  return add(scale(ctc, 1.0 - alpha), scale(distill, alpha));
}

// L2 gradient norm per encoder block, for checking how deep a loss reaches.
inline std::vector<double> per_layer_grad_norms(const ParamMap& params, int num_layers,
                                                const std::string& stem = "enc.block") {
  std::vector<double> norms;
  norms.reserve(static_cast<size_t>(num_layers));
  for (int l = 1; l <= num_layers; l++) {
    const std::string prefix = str_cat(stem, l, ".");
    double sq = 0.0;
    for (const auto& [name, param] : params.items()) {
      if (name.rfind(prefix, 0) != 0 || !param.has_grad()) continue;
      for (double g : param.grad()) sq += g * g;
    }
    norms.push_back(std::sqrt(sq));
  }
  return norms;
}

}  // namespace ctckd
