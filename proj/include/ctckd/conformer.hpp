#pragma once

// Conformer-lite acoustic encoder. Each block is the macaron structure with
// pre-norm sublayers:
//   u1 = x  + 1/2 FFN(LN(x))
//   u2 = u1 + SelfAtt(LN(u1))
//   u3 = u2 + Conv(LN(u2))          Conv = pw2(swish(LN(dw(glu(pw1(.))))))
//   out = LN(u3 + 1/2 FFN(LN(u3)))
// The convolution is depthwise-separable with a GLU gate; layer norm stands
// in for batch norm inside it (no batch dimension at this scale). With all
// sublayer projections zeroed the block is exactly LN(x), which the tests
// assert. Intermediate taps return block outputs h_l (the input of block
// l+1); the CTC head is shared between taps and the final layer.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ctckd/common.hpp"
#include "ctckd/nn.hpp"
#include "ctckd/tensor.hpp"

namespace ctckd {

struct EncoderConfig {
  int input_dim = 16;
  int num_layers = 6;
  int dim = 64;
  int heads = 4;
  int ff_dim = 128;
  int conv_kernel = 7;
  int subsample = 1;  // 1 = off, 2 = stride-2 frame-pair frontend
  double dropout = 0.0;

  void validate() const {
    check_arg(num_layers >= 2, "encoder: need at least 2 layers, got ", num_layers);
    check_arg(dim % heads == 0, "encoder: dim ", dim, " not divisible by ", heads, " heads");
    check_arg(conv_kernel % 2 == 1, "encoder: conv kernel must be odd, got ", conv_kernel);
    check_arg(subsample == 1 || subsample == 2, "encoder: subsample must be 1 or 2");
    check_arg(dropout >= 0.0 && dropout < 1.0, "encoder: dropout ", dropout, " out of range");
  }
};

// Intermediate attachment points: { floor(m*N/(M+1)) for m = 1..M }.
inline std::vector<int> tap_layers(int m, int n) {
  check_arg(m >= 1 && m < n, "taps: need 1 <= M < N, got M=", m, " N=", n);
  std::vector<int> taps;
  for (int i = 1; i <= m; i++) taps.push_back(i * n / (m + 1));
  return taps;
}

struct ConformerBlock {
  LayerNorm ffn1_norm, mha_norm, conv_norm, conv_mid_norm, ffn2_norm, final_norm;
  FeedForward ffn1, ffn2;
  MultiHeadAttention mha;
  Linear conv_pw1;  // D -> 2D, halved back by the GLU gate
  Tensor conv_dw;   // kernel x D depthwise filters
  Linear conv_pw2;  // D -> D

  ConformerBlock() = default;
  ConformerBlock(const EncoderConfig& cfg, std::mt19937_64& rng)
      : ffn1_norm(cfg.dim), mha_norm(cfg.dim), conv_norm(cfg.dim), conv_mid_norm(cfg.dim),
        ffn2_norm(cfg.dim), final_norm(cfg.dim),
        ffn1(cfg.dim, cfg.ff_dim, rng), ffn2(cfg.dim, cfg.ff_dim, rng),
        mha(cfg.dim, cfg.heads, rng),
        conv_pw1(cfg.dim, 2 * cfg.dim, rng),
        conv_dw(glorot_init({cfg.conv_kernel, cfg.dim}, rng)),
        conv_pw2(cfg.dim, cfg.dim, rng) {
    conv_dw.set_requires_grad(true);
  }

  Tensor operator()(const Tensor& x, const TrainContext& ctx) const {
    Tensor u1 = add(x, scale(apply_dropout(ffn1(ffn1_norm(x)), ctx), 0.5));
    Tensor pre_att = mha_norm(u1);
    Tensor u2 = add(u1, apply_dropout(mha(pre_att, pre_att), ctx));
    Tensor c = conv_pw2(swish(conv_mid_norm(
        depthwise_conv1d(glu(conv_pw1(conv_norm(u2))), conv_dw))));
    Tensor u3 = add(u2, apply_dropout(c, ctx));
    Tensor u4 = add(u3, scale(apply_dropout(ffn2(ffn2_norm(u3)), ctx), 0.5));
    return final_norm(u4);
  }

  void register_params(ParamMap& params, const std::string& prefix) {
    ffn1_norm.register_params(params, prefix + ".ffn1_norm");
    ffn1.register_params(params, prefix + ".ffn1");
    mha_norm.register_params(params, prefix + ".mha_norm");
    mha.register_params(params, prefix + ".mha");
    conv_norm.register_params(params, prefix + ".conv_norm");
    params.add(prefix + ".conv_dw", conv_dw);
    conv_pw1.register_params(params, prefix + ".conv_pw1");
    conv_mid_norm.register_params(params, prefix + ".conv_mid_norm");
    conv_pw2.register_params(params, prefix + ".conv_pw2");
    ffn2_norm.register_params(params, prefix + ".ffn2_norm");
    ffn2.register_params(params, prefix + ".ffn2");
    final_norm.register_params(params, prefix + ".final_norm");
  }
};

struct EncoderOutput {
  Tensor final;              // h_N, T x D
  std::vector<Tensor> taps;  // h_l per requested tap, same order
};

class ConformerEncoder {
 public:
  ConformerEncoder() = default;
  ConformerEncoder(const EncoderConfig& cfg, int ctc_vocab, std::mt19937_64& rng)
      : cfg_(cfg), ctc_vocab_(ctc_vocab) {
    cfg.validate();
    check_arg(ctc_vocab >= 2, "encoder: ctc vocab size ", ctc_vocab, " too small");
    const int in_dim = cfg.subsample == 2 ? 2 * cfg.input_dim : cfg.input_dim;
    input_proj_ = Linear(in_dim, cfg.dim, rng);
    blocks_.reserve(static_cast<size_t>(cfg.num_layers));
    for (int l = 0; l < cfg.num_layers; l++) blocks_.emplace_back(cfg, rng);
    head_ = Linear(cfg.dim, ctc_vocab, rng);
  }

  const EncoderConfig& config() const { return cfg_; }
  int ctc_vocab() const { return ctc_vocab_; }

  // taps must be sorted layer indices in [1, N-1]; h_l is captured after
  // block l, i.e. the exact input of block l+1.
  EncoderOutput forward(const Tensor& x, const std::vector<int>& taps,
                        const TrainContext& ctx) const {
    check_arg(x.ndim() == 2 && x.dim(1) == cfg_.input_dim, "encoder: input must be T x ",
              cfg_.input_dim, ", got ", shape_str(x.shape()));
    for (size_t i = 0; i < taps.size(); i++) {
      check_arg(taps[i] >= 1 && taps[i] < cfg_.num_layers, "encoder: tap ", taps[i],
                " outside [1,", cfg_.num_layers - 1, "]");
      check_arg(i == 0 || taps[i] > taps[i - 1], "encoder: taps must be strictly increasing");
    }
    Tensor h = add_positions(input_proj_(subsampled(x)));
    h = apply_dropout(h, ctx);
    EncoderOutput out;
    out.taps.reserve(taps.size());
    size_t next_tap = 0;
    for (int l = 1; l <= cfg_.num_layers; l++) {
      h = blocks_[static_cast<size_t>(l - 1)](h, ctx);
      if (next_tap < taps.size() && taps[next_tap] == l) {
        out.taps.push_back(h);
        next_tap++;
      }
    }
    out.final = h;
    return out;
  }

  // Shared affine projection to |V'| logits, used at taps and final layer.
  Tensor ctc_head(const Tensor& h) const { return head_(h); }

  void register_params(ParamMap& params, const std::string& prefix = "enc") {
    input_proj_.register_params(params, prefix + ".input_proj");
    for (size_t l = 0; l < blocks_.size(); l++)
      blocks_[l].register_params(params, str_cat(prefix, ".block", l + 1));
    head_.register_params(params, prefix + ".ctc_head");
  }

  // Closed-form parameter count:
  //   block  = 7D^2 + 4DF + 2F + kD + 20D
  //            (6 norms 2D; two FFNs 2DF+F+D each; attention 4D^2+3D, key
  //             projection bias-free; pw1 2D^2+2D; dw kD; pw2 D^2+D)
  //   total  = in*D + D  (input projection, in = input_dim * subsample)
  //          + N * block + D*V' + V'  (shared CTC head)
  static int64_t expected_param_count(const EncoderConfig& cfg, int ctc_vocab) {
    const int64_t d = cfg.dim, f = cfg.ff_dim, k = cfg.conv_kernel, n = cfg.num_layers;
    const int64_t in = cfg.subsample == 2 ? 2 * cfg.input_dim : cfg.input_dim;
    const int64_t block = 7 * d * d + 4 * d * f + 2 * f + k * d + 20 * d;
    return in * d + d + n * block + d * ctc_vocab + ctc_vocab;
  }

 private:
  Tensor subsampled(const Tensor& x) const {
    if (cfg_.subsample == 1) return x;
    const int64_t t2 = x.dim(0) / 2, din = x.dim(1);
    check_arg(t2 >= 1, "encoder: too few frames to subsample");
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(t2 * 2 * din));
    for (int64_t r = 0; r < t2; r++)
      for (int64_t j = 0; j < 2 * din; j++) idx.push_back(2 * r * din + j);
    return reshape(take(x, idx), {t2, 2 * din});
  }

  EncoderConfig cfg_;
  int ctc_vocab_ = 0;
  Linear input_proj_;
  std::vector<ConformerBlock> blocks_;
  Linear head_;
};

}  // namespace ctckd
