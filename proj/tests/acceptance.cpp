// Acceptance gate: one PASS/FAIL line per criterion, exit 1 on any failure.
//   --group fast    criteria 1-6 (pure math, seconds)
//   --criterion N   a single criterion (7-10 train real models)
//   (no args)       everything

#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ctckd/harness.hpp"

using namespace ctckd;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

bool verdict(int n, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << n << ": " << detail
            << std::endl;
  if (!pass) g_failures++;
  return pass;
}

double elapsed_s(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string temp_root(const std::string& name) {
  const std::string root = (fs::temp_directory_path() / ("ctckd_accept_" + name)).string();
  fs::remove_all(root);
  fs::create_directories(root);
  return root;
}

Tensor random_logits(int64_t t_len, int64_t v, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> vals(static_cast<size_t>(t_len * v));
  for (double& x : vals) x = dist(rng);
  return Tensor::from_values({t_len, v}, vals);
}

std::vector<double> row_log_softmax(const Tensor& logits) {
  const int64_t t_len = logits.dim(0), v = logits.dim(1);
  std::vector<double> lp(static_cast<size_t>(t_len * v));
  for (int64_t t = 0; t < t_len; t++) {
    double mx = kNegInf;
    for (int64_t j = 0; j < v; j++) mx = std::max(mx, logits.at(t, j));
    double z = 0.0;
    for (int64_t j = 0; j < v; j++) z += std::exp(logits.at(t, j) - mx);
    const double lse = mx + std::log(z);
    for (int64_t j = 0; j < v; j++)
      lp[static_cast<size_t>(t * v + j)] = logits.at(t, j) - lse;
  }
  return lp;
}

// -log of the alignment-sum over all |V'|^T paths whose collapse equals y.
double brute_ctc_nll(const Tensor& logits, const std::vector<int>& y, int blank) {
  const int64_t t_len = logits.dim(0), v = logits.dim(1);
  const std::vector<double> lp = row_log_softmax(logits);
  std::vector<int> align(static_cast<size_t>(t_len), 0);
  double total = kNegInf;
  while (true) {
    if (ctc_collapse(align, blank) == y) {
      double s = 0.0;
      for (int64_t t = 0; t < t_len; t++)
        s += lp[static_cast<size_t>(t * v + align[static_cast<size_t>(t)])];
      total = log_add(total, s);
    }
    int64_t pos = t_len - 1;
    while (pos >= 0 && ++align[static_cast<size_t>(pos)] == v) {
      align[static_cast<size_t>(pos)] = 0;
      pos--;
    }
    if (pos < 0) break;
  }
  return -total;
}

// Feasible random label sequence: CTC needs |y| plus one frame per adjacent
// repeat to fit into T.
std::vector<int> random_feasible_labels(int64_t t_len, int base, int max_u,
                                        std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len_dist(0, max_u);
  std::uniform_int_distribution<int> tok(0, base - 1);
  while (true) {
    std::vector<int> y(static_cast<size_t>(len_dist(rng)));
    for (int& t : y) t = tok(rng);
    int64_t required = static_cast<int64_t>(y.size());
    for (size_t i = 1; i < y.size(); i++)
      if (y[i] == y[i - 1]) required++;
    if (required <= t_len) return y;
  }
}

bool criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20260801);
  double max_loss_err = 0.0, max_grad_err = 0.0;
  const int instances = 200;
  for (int i = 0; i < instances; i++) {
    std::uniform_int_distribution<int64_t> t_dist(1, 6);
    std::uniform_int_distribution<int> v_dist(2, 4);
    const int64_t t_len = t_dist(rng);
    const int vp = v_dist(rng);
    const int blank = vp - 1;
    Tensor logits = random_logits(t_len, vp, rng);
    const std::vector<int> y = random_feasible_labels(t_len, blank, 3, rng);
    const double brute = brute_ctc_nll(logits, y, blank);
    const double fast = ctc_loss(logits, y, blank).item();
    max_loss_err = std::max(max_loss_err, std::abs(fast - brute));

    if (i < 60) {  // central finite differences on every logit entry
      logits.set_requires_grad(true);
      {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(ctc_loss(logits, y, blank));
      }
      const double h = 1e-5;
      for (int64_t t = 0; t < t_len; t++)
        for (int64_t j = 0; j < vp; j++) {
          std::vector<double> vals(static_cast<size_t>(t_len * vp));
          for (int64_t a = 0; a < t_len; a++)
            for (int64_t b = 0; b < vp; b++)
              vals[static_cast<size_t>(a * vp + b)] = logits.at(a, b);
          vals[static_cast<size_t>(t * vp + j)] += h;
          const double up = ctc_loss(Tensor::from_values({t_len, vp}, vals), y, blank).item();
          vals[static_cast<size_t>(t * vp + j)] -= 2.0 * h;
          const double dn = ctc_loss(Tensor::from_values({t_len, vp}, vals), y, blank).item();
          const double fd = (up - dn) / (2.0 * h);
          const double g = logits.grad()[static_cast<size_t>(t * vp + j)];
          max_grad_err = std::max(max_grad_err,
                                  std::abs(g - fd) / std::max(1.0, std::abs(fd)));
        }
    }
  }
  const double secs = elapsed_s(t0);
  std::ostringstream d;
  d << "ctc oracle on " << instances << " instances: max |loss err| " << max_loss_err
    << " (tol 1e-9), max grad rel err " << max_grad_err << " (tol 1e-4), " << secs
    << " s (limit 30)";
  return verdict(1, max_loss_err <= 1e-9 && max_grad_err <= 1e-4 && secs < 30.0, d.str());
}

bool criterion2() {
  std::mt19937_64 rng(20260802);
  const int64_t t_len = 4;
  const int vp = 3, blank = 2;  // |V| = 2 plus blank
  double max_err = 0.0;
  int64_t groups = 0;
  for (int inst = 0; inst < 25; inst++) {
    Tensor logits = random_logits(t_len, vp, rng);
    const std::vector<double> lp = row_log_softmax(logits);
    std::map<std::vector<int>, double> pooled;
    std::vector<int> align(static_cast<size_t>(t_len), 0);
    int count = 0;
    while (true) {
      double s = 0.0;
      for (int64_t t = 0; t < t_len; t++)
        s += lp[static_cast<size_t>(t * vp + align[static_cast<size_t>(t)])];
      const std::vector<int> y = ctc_collapse(align, blank);
      auto it = pooled.find(y);
      pooled[y] = it == pooled.end() ? s : log_add(it->second, s);
      count++;
      int64_t pos = t_len - 1;
      while (pos >= 0 && ++align[static_cast<size_t>(pos)] == vp) {
        align[static_cast<size_t>(pos)] = 0;
        pos--;
      }
      if (pos < 0) break;
    }
    if (count != 81) return verdict(2, false, "expected 81 alignments");
    for (const auto& [y, mass] : pooled) {
      const double via_loss = std::exp(-ctc_loss(logits, y, blank).item());
      max_err = std::max(max_err, std::abs(std::exp(mass) - via_loss));
      groups++;
    }
  }
  std::ostringstream d;
  d << "81-alignment collapse pooling matches exp(-ctc_loss) for " << groups
    << " reachable labelings, max err " << max_err << " (tol 1e-9)";
  return verdict(2, max_err <= 1e-9, d.str());
}

bool criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20260803);
  const int64_t t_len = 3;
  const int vp = 3, blank = 2;
  // unigram LM over the two real tokens
  std::vector<std::vector<int>> corpus;
  std::uniform_int_distribution<int> tok(0, 1);
  for (int i = 0; i < 40; i++) {
    std::vector<int> s(static_cast<size_t>(2 + i % 4));
    for (int& t : s) t = tok(rng);
    corpus.push_back(s);
  }
  const NgramLm lm = NgramLm::train(corpus, 1, 2);

  int checked = 0;
  for (int inst = 0; inst < 50; inst++) {
    Tensor logits = random_logits(t_len, vp, rng);
    Tensor logprobs = log_softmax(logits, 1);
    const std::vector<double> lp = row_log_softmax(logits);
    for (int use_lm = 0; use_lm < 2; use_lm++) {
      BeamConfig cfg;
      cfg.beam = 64;  // >= the whole prefix space
      cfg.lm_weight = use_lm ? 0.5 : 0.0;
      cfg.ins_penalty = 0.1;
      cfg.lm = use_lm ? &lm : nullptr;

      std::map<std::vector<int>, double> pooled;
      std::vector<int> align(static_cast<size_t>(t_len), 0);
      while (true) {
        double s = 0.0;
        for (int64_t t = 0; t < t_len; t++)
          s += lp[static_cast<size_t>(t * vp + align[static_cast<size_t>(t)])];
        const std::vector<int> y = ctc_collapse(align, blank);
        auto it = pooled.find(y);
        pooled[y] = it == pooled.end() ? s : log_add(it->second, s);
        int64_t pos = t_len - 1;
        while (pos >= 0 && ++align[static_cast<size_t>(pos)] == vp) {
          align[static_cast<size_t>(pos)] = 0;
          pos--;
        }
        if (pos < 0) break;
      }
      std::vector<int> best;
      double best_fused = kNegInf;
      bool first = true;
      for (const auto& [y, mass] : pooled) {
        double fused = mass + cfg.ins_penalty * static_cast<double>(y.size());
        if (cfg.lm != nullptr) {
          std::vector<int> ctx;
          for (int t : y) {
            fused += cfg.lm_weight * lm.logprob(ctx, t);
            ctx.push_back(t);
          }
        }
        if (first || fused > best_fused + 1e-15 ||
            (std::abs(fused - best_fused) <= 1e-15 && y < best)) {
          best = y;
          best_fused = fused;
          first = false;
        }
      }
      const std::vector<BeamHypothesis> hyp = prefix_beam_search(logprobs, cfg);
      if (hyp.front().prefix != best ||
          std::abs(hyp.front().fused - best_fused) > 1e-9) {
        std::ostringstream d;
        d << "beam/oracle mismatch on instance " << inst << (use_lm ? " with lm" : "");
        return verdict(3, false, d.str());
      }
      checked++;
    }
  }
  const double secs = elapsed_s(t0);
  std::ostringstream d;
  d << "beam search equals exhaustive fused argmax on " << checked
    << " decodes (lambda 0.5, gamma 0.1), " << secs << " s (limit 10)";
  return verdict(3, secs < 10.0, d.str());
}

bool criterion4() {
  auto scalar = [](double v) { return Tensor::from_values({1}, {v}); };
  const double alpha = 0.7, beta = 0.5;
  bool ok = true;

  // single tap (M=1)
  {
    Tensor d = distill_loss(scalar(1.25), {scalar(0.5)}, {alpha, beta, 10, {9}});
    const double expect = (1.0 - beta) * 1.25 + (beta / 1.0) * 0.5;
    ok = ok && d.item() == expect;
    Tensor t = total_loss(scalar(2.0), d, alpha);
    ok = ok && t.item() == (1.0 - alpha) * 2.0 + alpha * expect;
  }
  // two taps (M=2)
  {
    Tensor d = distill_loss(scalar(0.75), {scalar(0.5), scalar(0.25)},
                            {alpha, beta, 10, {6, 12}});
    ok = ok && d.item() == (1.0 - beta) * 0.75 + (beta / 2.0) * 0.5 + (beta / 2.0) * 0.25;
  }
  // no taps: beta must be zero and the final KL passes through whole
  {
    Tensor d = distill_loss(scalar(0.625), {}, {alpha, 0.0, 10, {}});
    ok = ok && d.item() == 0.625;
  }
  const bool tap_ok = tap_layers(1, 18) == std::vector<int>{9} &&
                      tap_layers(2, 18) == std::vector<int>{6, 12} &&
                      tap_layers(1, 6) == std::vector<int>{3};
  std::ostringstream det;
  det << "combiners reproduce hand-computed sums exactly (alpha 0.7, beta 0.5); "
         "tap formula gives "
      << tap_layers(1, 18)[0] << " for (M=1, N=18)";
  return verdict(4, ok && tap_ok, det.str());
}

std::vector<SoftLabelPosition> random_soft_positions(size_t u_len, int vocab, int k,
                                                     std::mt19937_64& rng) {
  std::vector<SoftLabelPosition> out(u_len);
  std::uniform_real_distribution<double> unit(0.05, 1.0);
  for (SoftLabelPosition& pos : out) {
    std::vector<int> ids(static_cast<size_t>(vocab));
    for (int j = 0; j < vocab; j++) ids[static_cast<size_t>(j)] = j;
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(static_cast<size_t>(k));
    double z = 0.0;
    std::vector<double> probs(static_cast<size_t>(k));
    for (double& p : probs) {
      p = unit(rng);
      z += p;
    }
    for (double& p : probs) p /= z;
    pos.ids = ids;
    pos.probs = probs;
  }
  return out;
}

double kl_direct(const Tensor& slogits, const std::vector<SoftLabelPosition>& pos) {
  double total = 0.0;
  for (size_t u = 0; u < pos.size(); u++) {
    const size_t k = pos[u].ids.size();
    double mx = kNegInf;
    for (int id : pos[u].ids)
      mx = std::max(mx, slogits.at(static_cast<int64_t>(u), id));
    double z = 0.0;
    for (int id : pos[u].ids)
      z += std::exp(slogits.at(static_cast<int64_t>(u), id) - mx);
    const double lse = mx + std::log(z);
    for (size_t j = 0; j < k; j++) {
      const double lq = slogits.at(static_cast<int64_t>(u), pos[u].ids[j]) - lse;
      const double p = (1.0 - static_cast<double>(k) * kTeacherFloor) * pos[u].probs[j] +
                       kTeacherFloor;
      total += std::exp(lq) * (lq - std::log(p));
    }
  }
  return total;
}

bool criterion5() {
  std::mt19937_64 rng(20260805);
  double max_oracle_err = 0.0, max_grad_err = 0.0, max_matched = 0.0, min_kl = 0.0;
  double min_perturbed = 1e300;
  const int pairs = 1000;
  for (int i = 0; i < pairs; i++) {
    std::uniform_int_distribution<int> v_dist(4, 20);
    const int vocab = v_dist(rng);
    std::uniform_int_distribution<int> k_dist(1, std::min(10, vocab));
    const int k = k_dist(rng);
    std::uniform_int_distribution<size_t> u_dist(1, 3);
    const size_t u_len = u_dist(rng);
    const std::vector<SoftLabelPosition> soft =
        random_soft_positions(u_len, vocab, k, rng);
    Tensor slogits = random_logits(static_cast<int64_t>(u_len), vocab, rng);

    const double kl = kl_loss(slogits, soft).item();
    min_kl = std::min(min_kl, kl);
    max_oracle_err = std::max(max_oracle_err, std::abs(kl - kl_direct(slogits, soft)));

    if (i < 25) {  // finite differences on the student logits
      slogits.set_requires_grad(true);
      {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(kl_loss(slogits, soft));
      }
      const double h = 1e-6;
      for (size_t u = 0; u < u_len; u++)
        for (int j = 0; j < vocab; j++) {
          std::vector<double> vals(u_len * static_cast<size_t>(vocab));
          for (size_t a = 0; a < u_len; a++)
            for (int b = 0; b < vocab; b++)
              vals[a * static_cast<size_t>(vocab) + static_cast<size_t>(b)] =
                  slogits.at(static_cast<int64_t>(a), b);
          const size_t flat = u * static_cast<size_t>(vocab) + static_cast<size_t>(j);
          vals[flat] += h;
          Tensor up_t = Tensor::from_values({static_cast<int64_t>(u_len), vocab}, vals);
          const double up = kl_loss(up_t, soft).item();
          vals[flat] -= 2.0 * h;
          Tensor dn_t = Tensor::from_values({static_cast<int64_t>(u_len), vocab}, vals);
          const double dn = kl_loss(dn_t, soft).item();
          const double fd = (up - dn) / (2.0 * h);
          const double g = slogits.grad()[flat];
          max_grad_err = std::max(max_grad_err,
                                  std::abs(g - fd) / std::max(1.0, std::abs(fd)));
        }
    }

    // zero iff the student matches the floored teacher on the support
    std::vector<double> matched(u_len * static_cast<size_t>(vocab), -37.0);
    for (size_t u = 0; u < u_len; u++)
      for (size_t j = 0; j < soft[u].ids.size(); j++) {
        const double p =
            (1.0 - static_cast<double>(k) * kTeacherFloor) * soft[u].probs[j] +
            kTeacherFloor;
        matched[u * static_cast<size_t>(vocab) + static_cast<size_t>(soft[u].ids[j])] =
            std::log(p);
      }
    Tensor matched_t =
        Tensor::from_values({static_cast<int64_t>(u_len), vocab}, matched);
    max_matched = std::max(max_matched, std::abs(kl_loss(matched_t, soft).item()));
    if (k > 1) {
      matched[static_cast<size_t>(soft[0].ids[0])] += 0.1;
      Tensor bumped =
          Tensor::from_values({static_cast<int64_t>(u_len), vocab}, matched);
      min_perturbed = std::min(min_perturbed, kl_loss(bumped, soft).item());
    }
  }
  std::ostringstream d;
  d << pairs << " pairs: min kl " << min_kl << " (>= -1e-12), max oracle err "
    << max_oracle_err << " (tol 1e-12), matched-support kl <= " << max_matched
    << " (tol 1e-12), perturbed kl >= " << min_perturbed << " (> 0), max grad rel err "
    << max_grad_err << " (tol 1e-4)";
  return verdict(5,
                 min_kl >= -1e-12 && max_oracle_err <= 1e-12 && max_matched <= 1e-12 &&
                     min_perturbed > 0.0 && max_grad_err <= 1e-4,
                 d.str());
}

bool criterion6() {
  std::mt19937_64 rng(20260806);
  EncoderConfig ecfg;
  ecfg.input_dim = 8;
  ecfg.num_layers = 6;
  ecfg.dim = 32;
  ecfg.heads = 2;
  ecfg.ff_dim = 64;
  ecfg.conv_kernel = 3;
  DecoderConfig dcfg;
  dcfg.layers = 1;
  dcfg.dim = 32;
  dcfg.heads = 2;
  dcfg.ff_dim = 64;
  const int base_vocab = 8;
  ConformerEncoder enc(ecfg, base_vocab + 1, rng);
  AttentionDecoder dec(dcfg, base_vocab, rng);
  ParamMap params;
  enc.register_params(params, "enc");
  dec.register_params(params, "dec");

  Tensor x = random_logits(12, ecfg.input_dim, rng);
  const std::vector<int> y{1, 2, 3, 4};
  const std::vector<SoftLabelPosition> soft =
      random_soft_positions(y.size(), base_vocab, 5, rng);
  const std::vector<int> hist = teacher_forced_history(y, dec.start_id());
  TrainContext ctx;

  auto distill_norms = [&](const DistillWeights& w) {
    params.zero_grads();
    Tape tape;
    TapeScope scope(tape);
    EncoderOutput eo = enc.forward(x, w.taps, ctx);
    Tensor klf = kl_loss(dec.forward(hist, eo.final, ctx), soft);
    std::vector<Tensor> tap_kls;
    for (const Tensor& tap : eo.taps)
      tap_kls.push_back(kl_loss(dec.forward(hist, tap, ctx), soft));
    tape.backward(distill_loss(klf, tap_kls, w));
    return per_layer_grad_norms(params, ecfg.num_layers);
  };

  // beta=1, M=1: all gradient flows through the tap at layer 3, so layer 1
  // must see gradient and layers above the tap must see exactly none.
  DistillWeights tap_only{0.7, 1.0, 5, tap_layers(1, ecfg.num_layers)};
  const std::vector<double> n1 = distill_norms(tap_only);
  // beta=0: decoder attached at layer N only; everything below is reached
  // through the final path.
  DistillWeights final_only{0.7, 0.0, 5, {}};
  const std::vector<double> n2 = distill_norms(final_only);

  std::ostringstream d;
  d << "per-layer |grad| with beta=1 tap@3:";
  for (size_t l = 0; l < n1.size(); l++) d << ' ' << n1[l];
  d << "; beta=0 final-only:";
  for (size_t l = 0; l < n2.size(); l++) d << ' ' << n2[l];
  bool ok = n1[0] > 0.0 && n1[1] > 0.0 && n1[2] > 0.0 && n1[3] == 0.0 &&
            n1[4] == 0.0 && n1[5] == 0.0;
  for (double g : n2) ok = ok && g > 0.0;
  return verdict(6, ok, d.str());
}

bool criterion7() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string root = temp_root("ordering");
  ExperimentConfig cfg;  // stock corpus and model sizes
  cfg.seed = 1234;
  cfg.corpus_dir = root + "/corpus";
  cfg.out_dir = root + "/runs";
  run_gen_data(cfg);
  run_train_teacher(cfg);
  std::cout << "  corpus and teacher ready after " << elapsed_s(t0) << " s\n";

  const std::vector<Variant> variants{Variant::kCtc, Variant::kInterAedKd,
                                      Variant::kInterCtcInterAedKd};
  const std::vector<uint64_t> seeds{101, 202, 303};
  double wer[3][3];
  for (size_t si = 0; si < seeds.size(); si++) {
    ExperimentConfig scfg = cfg;
    scfg.seed = seeds[si];
    for (size_t vi = 0; vi < variants.size(); vi++) {
      const std::string dir = run_dir_for(scfg, variants[vi]);
      train_asr(scfg, variants[vi], dir);
      AsrModel model = load_asr_model(scfg, dir);
      SplitData dev = load_split(CorpusPaths{scfg.corpus_dir}, "dev", model.vocab);
      DecodeRun run = decode_manifest(model, dev.man, dev.feats, "dev", "greedy", {});
      EvalResult res = evaluate_hypotheses(run, dev.man, variant_name(variants[vi]));
      append_metrics_row(dir, res);
      wer[vi][si] = res.agg.rate();
      std::cout << "  seed " << seeds[si] << ' ' << variant_name(variants[vi])
                << " dev greedy wer " << 100.0 * wer[vi][si] << "% ("
                << elapsed_s(t0) << " s)\n";
    }
  }
  double mean[3] = {0, 0, 0};
  for (int vi = 0; vi < 3; vi++)
    for (int si = 0; si < 3; si++) mean[vi] += wer[vi][si] / 3.0;
  int gap_seeds = 0;
  for (int si = 0; si < 3; si++)
    if (wer[0][si] > 0.0 && (wer[0][si] - wer[2][si]) / wer[0][si] >= 0.02) gap_seeds++;
  const double secs = elapsed_s(t0);
  const bool ordered = mean[2] <= mean[1] && mean[1] <= mean[0];
  std::ostringstream d;
  d << "mean dev greedy wer (3 seeds): ctc " << 100.0 * mean[0] << "%, interaed-kd "
    << 100.0 * mean[1] << "%, interctc-interaed-kd " << 100.0 * mean[2]
    << "%; ordering " << (ordered ? "holds" : "VIOLATED") << "; >=2% relative gap in "
    << gap_seeds << "/3 seeds; " << secs << " s (limit 2700)";
  return verdict(7, ordered && gap_seeds >= 2 && secs < 2700.0, d.str());
}

bool criterion8() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string root = temp_root("rtf");
  ExperimentConfig cfg;  // stock model dims on a reduced corpus
  cfg.seed = 7;
  cfg.corpus_dir = root + "/corpus";
  cfg.out_dir = root + "/runs";
  cfg.corpus.train_utts = 400;
  cfg.corpus.dev_utts = 100;
  cfg.corpus.test_utts = 100;
  cfg.corpus.text_sentences = 5000;
  cfg.epochs = 6;
  run_gen_data(cfg);
  CorpusPaths paths{cfg.corpus_dir};
  {
    Vocab vocab = Vocab::load(paths.vocab());
    NgramLm lm = NgramLm::train(load_text_corpus(paths.text(), vocab), cfg.ngram_order,
                                vocab.base_size());
    lm.save(paths.ngram(), vocab);
  }
  const std::string dir = run_dir_for(cfg, Variant::kCtc);
  train_asr(cfg, Variant::kCtc, dir);
  AsrModel model = load_asr_model(cfg, dir);
  SplitData dev = load_split(paths, "dev", model.vocab);

  DecodeRun greedy = decode_manifest(model, dev.man, dev.feats, "dev", "greedy", {}, 3);
  NgramLm lm = NgramLm::load(paths.ngram(), model.vocab);
  BeamConfig bc;
  bc.beam = 10;
  bc.lm_weight = 0.3;
  bc.lm = &lm;
  DecodeRun beam = decode_manifest(model, dev.man, dev.feats, "dev", "beam", bc, 3);

  const double ratio = beam.rtf / greedy.rtf;
  std::ostringstream d;
  d << "rtf greedy " << greedy.rtf << " vs beam10+lm " << beam.rtf << " (ratio "
    << ratio << ", needs >= 2); " << elapsed_s(t0) << " s";
  return verdict(8, greedy.rtf < beam.rtf && ratio >= 2.0, d.str());
}

bool criterion9() {
  const auto t0 = std::chrono::steady_clock::now();
  // deterministic-transition language: token u+1 is a fixed permutation of
  // token u, so every masked position is forced by its neighbors
  std::mt19937_64 rng(20260809);
  const int v = 16;
  Vocab vocab = Vocab::pseudo_words(v);
  std::vector<int> succ(static_cast<size_t>(v));
  for (int i = 0; i < v; i++) succ[static_cast<size_t>(i)] = i;
  std::shuffle(succ.begin(), succ.end(), rng);

  std::uniform_int_distribution<int> start(0, v - 1);
  std::uniform_int_distribution<size_t> len(5, 9);
  std::vector<std::vector<int>> corpus(1400);
  for (std::vector<int>& s : corpus) {
    s.resize(len(rng));
    s[0] = start(rng);
    for (size_t u = 1; u < s.size(); u++)
      s[u] = succ[static_cast<size_t>(s[u - 1])];
  }
  std::vector<std::vector<int>> heldout(corpus.end() - 200, corpus.end());
  std::vector<std::vector<int>> train_text(corpus.begin(), corpus.end() - 200);

  TeacherConfig tcfg;
  tcfg.layers = 2;
  tcfg.dim = 64;
  tcfg.heads = 4;
  tcfg.ff_dim = 128;
  std::mt19937_64 init_rng(11);
  MaskedLm teacher(tcfg, vocab.lm_size(), init_rng);
  ParamMap params;
  teacher.register_params(params);
  MlmTrainConfig mcfg;
  mcfg.epochs = 12;
  mcfg.seed = 5;
  mlm_train(teacher, params, train_text, heldout, vocab, mcfg);

  // top-1 of the production soft-label extraction must be the forced token
  int64_t hits = 0, total = 0;
  for (const std::vector<int>& s : heldout) {
    SoftLabelSet set = extract_soft_labels(s, teacher, vocab, 10);
    for (size_t u = 0; u < s.size(); u++) {
      hits += set.positions[u].ids[0] == s[u] ? 1 : 0;
      total++;
    }
  }
  const double acc = static_cast<double>(hits) / static_cast<double>(total);
  std::ostringstream d;
  d << "teacher top-1 soft label matches the forced token at " << 100.0 * acc
    << "% of " << total << " heldout positions (needs > 95%); " << elapsed_s(t0)
    << " s";
  return verdict(9, acc > 0.95, d.str());
}

// One complete pipeline pass: corpus, teacher, two students, decode, eval,
// report. Returns the rendered report table.
std::string pipeline_report(const std::string& root) {
  ExperimentConfig cfg;
  cfg.seed = 31;
  cfg.corpus_dir = root + "/corpus";
  cfg.out_dir = root + "/runs";
  cfg.corpus.train_utts = 300;
  cfg.corpus.dev_utts = 60;
  cfg.corpus.test_utts = 60;
  cfg.corpus.text_sentences = 4000;
  cfg.epochs = 6;
  run_gen_data(cfg);
  run_train_teacher(cfg);
  std::vector<std::string> dirs;
  for (Variant v : {Variant::kCtc, Variant::kInterAedKd}) {
    const std::string dir = run_dir_for(cfg, v);
    train_asr(cfg, v, dir);
    AsrModel model = load_asr_model(cfg, dir);
    CorpusPaths paths{cfg.corpus_dir};
    SplitData dev = load_split(paths, "dev", model.vocab);
    DecodeRun greedy = decode_manifest(model, dev.man, dev.feats, "dev", "greedy", {});
    save_hypotheses(greedy, dir + "/dev_greedy.hyp");
    append_metrics_row(dir, evaluate_hypotheses(load_hypotheses(dir + "/dev_greedy.hyp"),
                                                dev.man, variant_name(v)));
    NgramLm lm = NgramLm::load(paths.ngram(), model.vocab);
    BeamConfig bc;
    bc.beam = 10;
    bc.lm_weight = 0.3;
    bc.lm = &lm;
    DecodeRun beam = decode_manifest(model, dev.man, dev.feats, "dev", "beam", bc);
    save_hypotheses(beam, dir + "/dev_beam10.hyp");
    append_metrics_row(dir, evaluate_hypotheses(load_hypotheses(dir + "/dev_beam10.hyp"),
                                                dev.man, variant_name(v)));
    dirs.push_back(dir);
  }
  return render_report(dirs).text();
}

bool criterion10() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string a = pipeline_report(temp_root("repro_a"));
  const std::string b = pipeline_report(temp_root("repro_b"));
  std::ostringstream d;
  d << "two full pipeline runs produce " << (a == b ? "identical" : "DIFFERENT")
    << " report tables; " << elapsed_s(t0) << " s";
  if (a == b) {
    std::istringstream is(a);
    std::string line;
    while (std::getline(is, line)) std::cout << "  | " << line << '\n';
  }
  return verdict(10, a == b, d.str());
}

}  // namespace

int main(int argc, char** argv) {
  std::string group;
  int criterion = 0;
  for (int i = 1; i < argc; i++) {
    if (std::strcmp(argv[i], "--group") == 0 && i + 1 < argc) {
      group = argv[++i];
    } else if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      criterion = std::atoi(argv[++i]);
    } else {
      std::cerr << "usage: ctckd_acceptance [--group fast | --criterion N]\n";
      return 2;
    }
  }
  if (!group.empty() && group != "fast") {
    std::cerr << "unknown group '" << group << "'\n";
    return 2;
  }

  const bool all = group.empty() && criterion == 0;
  const bool fast = group == "fast";
  auto want = [&](int n) {
    if (all) return true;
    if (fast) return n <= 6;
    return criterion == n;
  };
  if (want(1)) criterion1();
  if (want(2)) criterion2();
  if (want(3)) criterion3();
  if (want(4)) criterion4();
  if (want(5)) criterion5();
  if (want(6)) criterion6();
  if (want(7)) criterion7();
  if (want(8)) criterion8();
  if (want(9)) criterion9();
  if (want(10)) criterion10();
  return g_failures == 0 ? 0 : 1;
}
