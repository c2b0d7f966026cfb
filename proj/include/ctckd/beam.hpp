#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "ctckd/common.hpp"
#include "ctckd/ngram.hpp"
#include "ctckd/tensor.hpp"

namespace ctckd {

struct BeamConfig {
  int beam = 10;
  double lm_weight = 0.0;     // lambda
  double ins_penalty = 0.0;   // gamma, added once per emitted token
  const NgramLm* lm = nullptr;

  void validate() const {
    check_arg(beam >= 1, "beam: size must be >= 1, got ", beam);
    check_arg(lm_weight >= 0.0, "beam: lm weight must be >= 0, got ", lm_weight);
  }
};

struct BeamHypothesis {
  std::vector<int> prefix;
  double log_pb = kNegInf;   // alignment mass ending in blank
  double log_pnb = kNegInf;  // alignment mass ending in the last prefix token
  double log_lm = 0.0;       // cumulative LM log-prob of the prefix
  double fused = kNegInf;    // log_ctc + lambda * log_lm + gamma * |prefix|

  double log_ctc() const { return log_add(log_pb, log_pnb); }
};

namespace detail {

struct PrefixMass {
  double pb = kNegInf;
  double pnb = kNegInf;
  double lm = 0.0;
};

inline double fused_score(const std::vector<int>& prefix, const PrefixMass& mass,
                          const BeamConfig& cfg) {
  return log_add(mass.pb, mass.pnb) + cfg.lm_weight * mass.lm +
         cfg.ins_penalty * static_cast<double>(prefix.size());
}

}  // namespace detail

// CTC prefix beam search over log-softmaxed frame posteriors (blank = last
// column), with optional n-gram shallow fusion. Duplicate prefixes are merged
// by logsumexp; the LM scores each token once, when its prefix is first
// extended. Returns hypotheses ranked by fused score (ties: lexicographically
// smaller prefix first). Deterministic.
inline std::vector<BeamHypothesis> prefix_beam_search(const Tensor& logprobs,
                                                      const BeamConfig& cfg) {
  cfg.validate();
  check_arg(logprobs.ndim() == 2 && logprobs.dim(0) >= 1,
            "beam: need a T x V' log-prob matrix");
  const int64_t t_len = logprobs.dim(0);
  const int64_t ext_vocab = logprobs.dim(1);
  check_arg(ext_vocab >= 2, "beam: vocabulary too small");
  const int blank = static_cast<int>(ext_vocab) - 1;
  if (cfg.lm != nullptr)
    check_arg(cfg.lm->vocab_size() == blank, "beam: LM vocab ", cfg.lm->vocab_size(),
              " != decoder vocab ", blank);
  for (int64_t t = 0; t < t_len; t++) {
    double lse = kNegInf;
    for (int64_t v = 0; v < ext_vocab; v++) lse = log_add(lse, logprobs.at(t, v));
    check_arg(std::fabs(lse) <= 1e-6, "beam: row ", t, " is not log-normalized (lse ",
              lse, ")");
  }

  using Beams = std::map<std::vector<int>, detail::PrefixMass>;
  Beams beams;
  beams[{}] = {0.0, kNegInf, 0.0};

  for (int64_t t = 0; t < t_len; t++) {
    Beams next;
    for (const auto& [prefix, mass] : beams) {
      const double total = log_add(mass.pb, mass.pnb);
      // blank: prefix unchanged, mass moves to the blank bucket
      {
        detail::PrefixMass& entry = next[prefix];
        entry.lm = mass.lm;
        entry.pb = log_add(entry.pb, total + logprobs.at(t, blank));
      }
      for (int c = 0; c < blank; c++) {
        const double p = logprobs.at(t, c);
        if (!prefix.empty() && prefix.back() == c) {
          // repeat without an intervening blank collapses onto the same prefix
          detail::PrefixMass& same = next[prefix];
          same.lm = mass.lm;
          same.pnb = log_add(same.pnb, mass.pnb + p);
          // only the blank-terminated mass can emit the token again
          if (mass.pb != kNegInf) {
            std::vector<int> ext = prefix;
            ext.push_back(c);
            detail::PrefixMass& entry = next[ext];
            if (entry.pb == kNegInf && entry.pnb == kNegInf && cfg.lm != nullptr)
              entry.lm = mass.lm + cfg.lm->logprob(prefix, c);
            entry.pnb = log_add(entry.pnb, mass.pb + p);
          }
        } else {
          std::vector<int> ext = prefix;
          ext.push_back(c);
          detail::PrefixMass& entry = next[ext];
          if (entry.pb == kNegInf && entry.pnb == kNegInf && cfg.lm != nullptr)
            entry.lm = mass.lm + cfg.lm->logprob(prefix, c);
          entry.pnb = log_add(entry.pnb, total + p);
        }
      }
    }
    // keep the top beam-size prefixes by fused score
    std::vector<std::pair<double, const std::vector<int>*>> ranked;
    ranked.reserve(next.size());
    for (const auto& [prefix, mass] : next)
      ranked.emplace_back(detail::fused_score(prefix, mass, cfg), &prefix);
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    if (static_cast<int>(ranked.size()) > cfg.beam)
      ranked.resize(static_cast<size_t>(cfg.beam));
    Beams pruned;
    for (const auto& [score, prefix] : ranked) pruned[*prefix] = next[*prefix];
    beams = std::move(pruned);
  }

  std::vector<BeamHypothesis> out;
  out.reserve(beams.size());
  for (const auto& [prefix, mass] : beams) {
    BeamHypothesis hyp;
    hyp.prefix = prefix;
    hyp.log_pb = mass.pb;
    hyp.log_pnb = mass.pnb;
    hyp.log_lm = mass.lm;
    hyp.fused = detail::fused_score(prefix, mass, cfg);
    out.push_back(std::move(hyp));
  }
  std::stable_sort(out.begin(), out.end(), [](const BeamHypothesis& a,
                                              const BeamHypothesis& b) {
    if (a.fused != b.fused) return a.fused > b.fused;
    return a.prefix < b.prefix;
  });
  return out;
}

// Grid search over (lambda, gamma) minimizing dev WER as reported by `score`.
// Ties prefer smaller lambda, then smaller |gamma|, then smaller gamma.
inline std::pair<double, double> tune_fusion(
    const std::vector<std::pair<double, double>>& grid,
    const std::function<double(double, double)>& score) {
  check_arg(!grid.empty(), "tune_fusion: empty grid");
  std::pair<double, double> best_point = grid.front();
  double best_wer = std::numeric_limits<double>::infinity();
  for (const auto& [lambda, gamma] : grid) {
    const double wer = score(lambda, gamma);
    const bool better =
        wer < best_wer ||
        (wer == best_wer &&
         (lambda < best_point.first ||
          (lambda == best_point.first &&
           (std::fabs(gamma) < std::fabs(best_point.second) ||
            (std::fabs(gamma) == std::fabs(best_point.second) &&
             gamma < best_point.second)))));
    if (better) {
      best_wer = wer;
      best_point = {lambda, gamma};
    }
  }
  return best_point;
}

}  // namespace ctckd
