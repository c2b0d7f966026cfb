#pragma once

// Parameterised layers shared by the acoustic encoder, the attention
// decoder, and the masked-LM teacher. Layers own their parameter tensors
// and register them under dotted names for the optimizer and checkpoints.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ctckd/common.hpp"
#include "ctckd/tensor.hpp"

namespace ctckd {

// Ordered name -> tensor registry. Iteration order is registration order,
// which keeps optimizer updates and checkpoints deterministic.
class ParamMap {
 public:
  void add(const std::string& name, Tensor t) {
    check_arg(index_.find(name) == index_.end(), "param: duplicate name '", name, "'");
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
  }

  Tensor* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  size_t size() const { return items_.size(); }

  void zero_grads() {
    for (auto& [name, t] : items_) t.zero_grad();
  }

  int64_t total_numel() const {
    int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

  // Content hash over names, shapes, and raw values; used to pin the frozen
  // teacher and to key soft-label caches.
  uint64_t value_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, t] : items_) {
      h = fnv1a(name, h);
      for (int64_t d : t.shape()) h = fnv1a(&d, sizeof(d), h);
      h = fnv1a(t.data(), sizeof(double) * static_cast<size_t>(t.numel()), h);
    }
    return h;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::map<std::string, size_t> index_;
};

// Carries train/eval mode and the RNG that draws dropout masks. Masks are
// supplied from outside the ops so a seeded run is replayable.
struct TrainContext {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;

  static TrainContext eval() { return TrainContext{}; }
};

inline Tensor apply_dropout(const Tensor& x, const TrainContext& ctx) {
  if (!ctx.training || ctx.dropout <= 0.0) return x;
  check_state(ctx.rng != nullptr, "dropout: training context has no rng");
  const double keep = 1.0 - ctx.dropout;
  Tensor mask = Tensor::zeros(x.shape());
  std::bernoulli_distribution coin(keep);
  for (int64_t i = 0; i < mask.numel(); i++)
    mask.mutable_data()[i] = coin(*ctx.rng) ? 1.0 / keep : 0.0;
  return mul(x, mask);
}

inline Tensor glorot_init(Shape shape, std::mt19937_64& rng) {
  check_arg(shape.size() == 2, "glorot_init: need 2-D shape");
  const double lim = std::sqrt(6.0 / double(shape[0] + shape[1]));
  Tensor t = Tensor::zeros(std::move(shape));
  std::uniform_real_distribution<double> dist(-lim, lim);
  for (int64_t i = 0; i < t.numel(); i++) t.mutable_data()[i] = dist(rng);
  return t;
}

struct Linear {
  Tensor w;  // in x out
  Tensor b;  // undefined when constructed without bias

  Linear() = default;
  Linear(int64_t in, int64_t out, std::mt19937_64& rng, bool with_bias = true)
      : w(glorot_init({in, out}, rng)) {
    w.set_requires_grad(true);
    if (with_bias) {
      b = Tensor::zeros({out});
      b.set_requires_grad(true);
    }
  }

  Tensor operator()(const Tensor& x) const {
    Tensor y = matmul(x, w);
    return b.defined() ? add_row(y, b) : y;
  }

  void register_params(ParamMap& params, const std::string& prefix) {
    params.add(prefix + ".w", w);
    if (b.defined()) params.add(prefix + ".b", b);
  }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  LayerNorm() = default;
  explicit LayerNorm(int64_t dim) : gain(Tensor::full({dim}, 1.0)), bias(Tensor::zeros({dim})) {
    gain.set_requires_grad(true);
    bias.set_requires_grad(true);
  }

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }

  void register_params(ParamMap& params, const std::string& prefix) {
    params.add(prefix + ".gain", gain);
    params.add(prefix + ".bias", bias);
  }
};

struct Embedding {
  Tensor table;  // V x D

  Embedding() = default;
  Embedding(int64_t vocab, int64_t dim, std::mt19937_64& rng)
      : table(Tensor::randn({vocab, dim}, rng, 1.0 / std::sqrt(double(dim)))) {
    table.set_requires_grad(true);
  }

  Tensor operator()(const std::vector<int>& ids) const { return embedding(table, ids); }

  void register_params(ParamMap& params, const std::string& prefix) {
    params.add(prefix + ".table", table);
  }
};

// Fixed sinusoidal absolute positions, added after input projection.
inline Tensor sinusoidal_positions(int64_t t_len, int64_t dim) {
  Tensor pe = Tensor::zeros({t_len, dim});
  for (int64_t t = 0; t < t_len; t++)
    for (int64_t i = 0; i < dim; i += 2) {
      const double angle = double(t) / std::pow(10000.0, double(i) / double(dim));
      pe.mutable_data()[t * dim + i] = std::sin(angle);
      if (i + 1 < dim) pe.mutable_data()[t * dim + i + 1] = std::cos(angle);
    }
  return pe;
}

inline Tensor add_positions(const Tensor& x) {
  return add(x, sinusoidal_positions(x.dim(0), x.dim(1)));
}

// Multi-head attention. Heads are column slices of the projected q/k/v;
// per-head attention contexts are concatenated and projected back.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(int64_t dim, int num_heads, std::mt19937_64& rng)
      : wq(dim, dim, rng),
        wk(dim, dim, rng, /*with_bias=*/false),  // key bias cancels in softmax
        wv(dim, dim, rng), wo(dim, dim, rng), heads(num_heads) {
    check_arg(dim % num_heads == 0, "mha: dim ", dim, " not divisible by ", num_heads,
              " heads");
  }

  // q_in attends over kv_in; pass kv_in = q_in for self-attention.
  Tensor operator()(const Tensor& q_in, const Tensor& kv_in, bool causal = false) const {
    check_arg(kv_in.numel() > 0, "mha: empty key/value input");
    const int64_t dim = wq.w.dim(0);
    const int64_t dk = dim / heads;
    Tensor q = wq(q_in), k = wk(kv_in), v = wv(kv_in);
    Tensor mask;
    if (causal) {
      check_arg(q_in.dim(0) == kv_in.dim(0), "mha: causal mask needs square attention");
      mask = causal_mask(q_in.dim(0));
    }
    std::vector<Tensor> ctx;
    ctx.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; h++) {
      Tensor qh = slice(q, 1, h * dk, dk);
      Tensor kh = slice(k, 1, h * dk, dk);
      Tensor vh = slice(v, 1, h * dk, dk);
      ctx.push_back(scaled_dot_attention(qh, kh, vh, causal ? &mask : nullptr));
    }
    return wo(concat(ctx, 1));
  }

  void register_params(ParamMap& params, const std::string& prefix) {
    wq.register_params(params, prefix + ".wq");
    wk.register_params(params, prefix + ".wk");
    wv.register_params(params, prefix + ".wv");
    wo.register_params(params, prefix + ".wo");
  }
};

// Two-layer position-wise feed-forward with swish.
struct FeedForward {
  Linear w1, w2;

  FeedForward() = default;
  FeedForward(int64_t dim, int64_t hidden, std::mt19937_64& rng)
      : w1(dim, hidden, rng), w2(hidden, dim, rng) {}

  Tensor operator()(const Tensor& x) const { return w2(swish(w1(x))); }

  void register_params(ParamMap& params, const std::string& prefix) {
    w1.register_params(params, prefix + ".w1");
    w2.register_params(params, prefix + ".w2");
  }
};

// Pre-norm Transformer encoder block: x + Att(LN(x)), then x + FFN(LN(x)).
struct TransformerBlock {
  LayerNorm att_norm, ffn_norm;
  MultiHeadAttention mha;
  FeedForward ffn;

  TransformerBlock() = default;
  TransformerBlock(int64_t dim, int heads, int64_t ff_dim, std::mt19937_64& rng)
      : att_norm(dim), ffn_norm(dim), mha(dim, heads, rng), ffn(dim, ff_dim, rng) {}

  Tensor operator()(const Tensor& x, const TrainContext& ctx) const {
    Tensor a = att_norm(x);
    Tensor u = add(x, apply_dropout(mha(a, a), ctx));
    return add(u, apply_dropout(ffn(ffn_norm(u)), ctx));
  }

  void register_params(ParamMap& params, const std::string& prefix) {
    att_norm.register_params(params, prefix + ".att_norm");
    mha.register_params(params, prefix + ".mha");
    ffn_norm.register_params(params, prefix + ".ffn_norm");
    ffn.register_params(params, prefix + ".ffn");
  }
};

}  // namespace ctckd
