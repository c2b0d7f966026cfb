#pragma once

// Exact CTC machinery: the collapse function, log-space forward-backward
// loss with analytic gradients (softmax minus occupancy), greedy decoding,
// and the intermediate-loss combiner. The loss marginalizes over every
// alignment whose collapse equals the label sequence; blank is the trailing
// id of the logit rows. All arithmetic stays in log space.

#include <cmath>
#include <cstdint>
#include <vector>

#include "ctckd/common.hpp"
#include "ctckd/tensor.hpp"

namespace ctckd {

// Merge consecutive repeats, then delete blanks (standard order).
inline std::vector<int> ctc_collapse(const std::vector<int>& alignment, int blank_id) {
  std::vector<int> out;
  int prev = -1;
  for (int a : alignment) {
    if (a != prev && a != blank_id) out.push_back(a);
    prev = a;
  }
  return out;
}

// Canonical alignment of a label sequence: blank between adjacent repeats,
// so collapse(embed(y)) = y.
inline std::vector<int> ctc_embed(const std::vector<int>& y, int blank_id) {
  std::vector<int> out;
  for (size_t i = 0; i < y.size(); i++) {
    if (i > 0 && y[i] == y[i - 1]) out.push_back(blank_id);
    out.push_back(y[i]);
  }
  return out;
}

inline int64_t count_adjacent_repeats(const std::vector<int>& y) {
  int64_t r = 0;
  for (size_t i = 1; i < y.size(); i++)
    if (y[i] == y[i - 1]) r++;
  return r;
}

namespace detail {

// Stable row-wise log-softmax into a flat T x V buffer, outside the tape.
inline std::vector<double> row_log_softmax(const Tensor& logits) {
  const int64_t t_len = logits.dim(0), v = logits.dim(1);
  std::vector<double> out(static_cast<size_t>(t_len * v));
  for (int64_t t = 0; t < t_len; t++) {
    const double* row = logits.data() + t * v;
    double mx = row[0];
    for (int64_t k = 1; k < v; k++) mx = std::max(mx, row[k]);
    double z = 0.0;
    for (int64_t k = 0; k < v; k++) z += std::exp(row[k] - mx);
    const double log_z = mx + std::log(z);
    for (int64_t k = 0; k < v; k++) out[static_cast<size_t>(t * v + k)] = row[k] - log_z;
  }
  return out;
}

}  // namespace detail

// Forward/backward lattice over the blank-interleaved extended sequence
// (length 2U+1). Both alpha and beta include the emission at their own
// frame, so the occupancy divides one emission term back out.
struct CtcLattice {
  int64_t t_len = 0;
  int64_t ext_len = 0;                 // 2U+1
  std::vector<int> extended;           // blank-interleaved labels
  std::vector<double> alpha, beta;     // t_len x ext_len, log space
  double log_prob = kNegInf;           // total log P(y|X)

  double log_prob_from_beta() const {
    return log_add(beta[0], ext_len > 1 ? beta[1] : kNegInf);
  }
};

inline void ctc_check_inputs(const Tensor& logits, const std::vector<int>& y, int blank_id) {
  check_arg(logits.ndim() == 2, "ctc: logits must be T x V', got ", shape_str(logits.shape()));
  const int64_t t_len = logits.dim(0), v = logits.dim(1);
  check_arg(t_len >= 1, "ctc: need at least one frame");
  check_arg(blank_id == v - 1, "ctc: blank id ", blank_id, " must be the trailing logit ",
            v - 1);
  for (int id : y)
    check_arg(id >= 0 && id < blank_id, "ctc: label id ", id, " outside base vocabulary");
  const int64_t need = static_cast<int64_t>(y.size()) + count_adjacent_repeats(y);
  check_arg(t_len >= need, "ctc: infeasible length: T=", t_len, " < ", need,
            " required for U=", y.size(), " with repeats");
}

// log_probs: flat T x V' row log-softmax values.
inline CtcLattice ctc_forward_backward(const std::vector<double>& log_probs, int64_t t_len,
                                       int64_t v, const std::vector<int>& y, int blank_id) {
  const int64_t u = static_cast<int64_t>(y.size());
  const int64_t s_len = 2 * u + 1;
  CtcLattice lat;
  lat.t_len = t_len;
  lat.ext_len = s_len;
  lat.extended.resize(static_cast<size_t>(s_len));
  for (int64_t s = 0; s < s_len; s++)
    lat.extended[static_cast<size_t>(s)] = (s % 2 == 0) ? blank_id : y[static_cast<size_t>(s / 2)];

  auto lp = [&](int64_t t, int64_t s) {
    return log_probs[static_cast<size_t>(t * v + lat.extended[static_cast<size_t>(s)])];
  };
  // transition from s-2 is legal when the target is a label differing from
  // the label two back (blanks and repeated labels must pass through s-1)
  auto skip_ok = [&](int64_t s) {
    return s >= 2 && lat.extended[static_cast<size_t>(s)] != blank_id &&
           lat.extended[static_cast<size_t>(s)] != lat.extended[static_cast<size_t>(s - 2)];
  };

  lat.alpha.assign(static_cast<size_t>(t_len * s_len), kNegInf);
  lat.beta.assign(static_cast<size_t>(t_len * s_len), kNegInf);
  auto a = [&](int64_t t, int64_t s) -> double& {
    return lat.alpha[static_cast<size_t>(t * s_len + s)];
  };
  auto b = [&](int64_t t, int64_t s) -> double& {
    return lat.beta[static_cast<size_t>(t * s_len + s)];
  };

  a(0, 0) = lp(0, 0);
  if (s_len > 1) a(0, 1) = lp(0, 1);
  for (int64_t t = 1; t < t_len; t++)
    for (int64_t s = 0; s < s_len; s++) {
      double acc = a(t - 1, s);
      if (s >= 1) acc = log_add(acc, a(t - 1, s - 1));
      if (skip_ok(s)) acc = log_add(acc, a(t - 1, s - 2));
      if (acc != kNegInf) a(t, s) = acc + lp(t, s);
    }

  b(t_len - 1, s_len - 1) = lp(t_len - 1, s_len - 1);
  if (s_len > 1) b(t_len - 1, s_len - 2) = lp(t_len - 1, s_len - 2);
  for (int64_t t = t_len - 2; t >= 0; t--)
    for (int64_t s = s_len - 1; s >= 0; s--) {
      double acc = b(t + 1, s);
      if (s + 1 < s_len) acc = log_add(acc, b(t + 1, s + 1));
      if (s + 2 < s_len && skip_ok(s + 2)) acc = log_add(acc, b(t + 1, s + 2));
      if (acc != kNegInf) b(t, s) = acc + lp(t, s);
    }

  lat.log_prob = log_add(a(t_len - 1, s_len - 1),
                         s_len > 1 ? a(t_len - 1, s_len - 2) : kNegInf);
  check_state(lat.log_prob != kNegInf, "ctc: no feasible path survived the lattice");
  return lat;
}

// Per-frame label occupancies aggregated onto vocabulary ids: a T x V'
// matrix whose rows each sum to 1. gamma_t(s) = exp(alpha + beta - lp - logP)
// divides out the doubly counted emission at frame t.
inline std::vector<double> ctc_label_occupancy(const CtcLattice& lat,
                                               const std::vector<double>& log_probs,
                                               int64_t v) {
  std::vector<double> occ(static_cast<size_t>(lat.t_len * v), 0.0);
  for (int64_t t = 0; t < lat.t_len; t++)
    for (int64_t s = 0; s < lat.ext_len; s++) {
      const double al = lat.alpha[static_cast<size_t>(t * lat.ext_len + s)];
      const double be = lat.beta[static_cast<size_t>(t * lat.ext_len + s)];
      if (al == kNegInf || be == kNegInf) continue;
      const int label = lat.extended[static_cast<size_t>(s)];
      const double lp = log_probs[static_cast<size_t>(t * v + label)];
      occ[static_cast<size_t>(t * v + label)] += std::exp(al + be - lp - lat.log_prob);
    }
  return occ;
}

// Negative log-likelihood with an exact gradient recorded on the active
// tape: d loss / d logit[t,k] = softmax[t,k] - occupancy[t,k].
inline Tensor ctc_loss(const Tensor& logits, const std::vector<int>& y, int blank_id) {
  ctc_check_inputs(logits, y, blank_id);
  const int64_t t_len = logits.dim(0), v = logits.dim(1);
  std::vector<double> log_probs = detail::row_log_softmax(logits);
  CtcLattice lat = ctc_forward_backward(log_probs, t_len, v, y, blank_id);
  Tensor out = Tensor::from_values({1}, {-lat.log_prob});
  auto il = logits.impl();
  auto io = out.impl();
  detail::maybe_record(out, detail::tracked(logits), [=, lat = std::move(lat),
                                                      log_probs = std::move(log_probs)] {
    if (io->grad.empty() || !il->requires_grad) return;
    il->ensure_grad();
    const double g = io->grad[0];
    std::vector<double> occ = ctc_label_occupancy(lat, log_probs, v);
    for (int64_t t = 0; t < t_len; t++)
      for (int64_t k = 0; k < v; k++) {
        const size_t i = static_cast<size_t>(t * v + k);
        il->grad[i] += g * (std::exp(log_probs[i]) - occ[i]);
      }
  });
  return out;
}

// collapse(argmax per frame); never emits blank.
inline std::vector<int> ctc_greedy_decode(const Tensor& logits, int blank_id) {
  check_arg(logits.ndim() == 2, "ctc: logits must be T x V'");
  const int64_t t_len = logits.dim(0), v = logits.dim(1);
  std::vector<int> best(static_cast<size_t>(t_len));
  for (int64_t t = 0; t < t_len; t++) {
    const double* row = logits.data() + t * v;
    int arg = 0;
    for (int64_t k = 1; k < v; k++)
      if (row[k] > row[arg]) arg = static_cast<int>(k);
    best[static_cast<size_t>(t)] = arg;
  }
  return ctc_collapse(best, blank_id);
}

// (1-w) * final + w * inter, differentiable through both inputs.
inline Tensor inter_ctc_combine(const Tensor& loss_final, const Tensor& loss_inter, double w) {
  check_arg(w >= 0.0 && w <= 1.0, "interctc: weight ", w, " outside [0,1]");
  return add(scale(loss_final, 1.0 - w), scale(loss_inter, w));
}

}  // namespace ctckd
