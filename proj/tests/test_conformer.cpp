#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "ctckd/conformer.hpp"
#include "ctckd/ctc.hpp"
#include "ctckd/nn.hpp"
#include "ctckd/optim.hpp"
#include "helpers.hpp"

using namespace ctckd;

namespace {

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.input_dim = 6;
  cfg.num_layers = 3;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.ff_dim = 16;
  cfg.conv_kernel = 3;
  return cfg;
}

}  // namespace

TEST_CASE("tap formula", "[conformer]") {
  REQUIRE(tap_layers(1, 18) == std::vector<int>{9});
  REQUIRE(tap_layers(2, 18) == std::vector<int>{6, 12});
  REQUIRE(tap_layers(1, 6) == std::vector<int>{3});
  REQUIRE(tap_layers(3, 4) == std::vector<int>{1, 2, 3});
  REQUIRE_THROWS_AS(tap_layers(6, 6), std::invalid_argument);
  REQUIRE_THROWS_AS(tap_layers(0, 6), std::invalid_argument);
}

TEST_CASE("block preserves shape", "[conformer]") {
  std::mt19937_64 rng(1);
  EncoderConfig cfg = small_config();
  ConformerBlock block(cfg, rng);
  for (int64_t t : {1, 5, 17}) {
    Tensor x = Tensor::randn({t, cfg.dim}, rng);
    Tensor y = block(x, TrainContext::eval());
    REQUIRE(y.shape() == Shape{t, cfg.dim});
    REQUIRE(all_finite(y));
  }
}

TEST_CASE("zeroed sublayer projections reduce the block to layer norm", "[conformer]") {
  std::mt19937_64 rng(2);
  EncoderConfig cfg = small_config();
  ConformerBlock block(cfg, rng);
  ParamMap params;
  block.register_params(params, "blk");
  for (auto& [name, t] : params.items())
    if (name.find("norm") == std::string::npos)
      std::fill(t.mutable_data(), t.mutable_data() + t.numel(), 0.0);
  Tensor x = Tensor::randn({4, cfg.dim}, rng);
  Tensor y = block(x, TrainContext::eval());
  Tensor expect = block.final_norm(x);
  for (int64_t i = 0; i < y.numel(); i++)
    REQUIRE(y.data()[i] == Catch::Approx(expect.data()[i]).margin(1e-12));
}

TEST_CASE("block gradient matches finite differences on sampled parameters", "[conformer]") {
  std::mt19937_64 rng(3);
  EncoderConfig cfg = small_config();
  ConformerBlock block(cfg, rng);
  ParamMap params;
  block.register_params(params, "blk");
  Tensor x = Tensor::randn({3, cfg.dim}, rng);
  x.set_requires_grad(true);

  auto forward = [&] {
    Tensor y = block(x, TrainContext::eval());
    Tensor w = Tensor::zeros(y.shape());
    for (int64_t i = 0; i < w.numel(); i++)
      w.mutable_data()[i] = 0.3 + 0.1 * static_cast<double>(i % 5);
    return sum(mul(y, w)).item();
  };
  auto forward_backward = [&] {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = block(x, TrainContext::eval());
    Tensor w = Tensor::zeros(y.shape());
    for (int64_t i = 0; i < w.numel(); i++)
      w.mutable_data()[i] = 0.3 + 0.1 * static_cast<double>(i % 5);
    Tensor loss = sum(mul(y, w));
    tape.backward(loss);
    return loss.item();
  };

  params.zero_grads();
  x.zero_grad();
  forward_backward();

  // full check on the input, spot check on 10 random parameter elements
  for (int64_t i = 0; i < x.numel(); i++) {
    double numeric = testutil::fd_grad(x, i, forward);
    REQUIRE(testutil::grad_close(x.grad()[static_cast<size_t>(i)], numeric));
  }
  for (int pick = 0; pick < 10; pick++) {
    auto& [name, p] = params.items()[rng() % params.size()];
    const int64_t i = static_cast<int64_t>(rng() % static_cast<uint64_t>(p.numel()));
    double analytic = p.has_grad() ? p.grad()[static_cast<size_t>(i)] : 0.0;
    double numeric = testutil::fd_grad(p, i, forward);
    INFO(name << "[" << i << "]");
    REQUIRE(testutil::grad_close(analytic, numeric));
  }
}

TEST_CASE("encoder returns requested taps with matching shapes", "[conformer]") {
  std::mt19937_64 rng(4);
  EncoderConfig cfg = small_config();
  ConformerEncoder enc(cfg, 5, rng);
  Tensor x = Tensor::randn({7, cfg.input_dim}, rng);

  EncoderOutput none = enc.forward(x, {}, TrainContext::eval());
  REQUIRE(none.taps.empty());
  REQUIRE(none.final.shape() == Shape{7, cfg.dim});

  EncoderOutput tapped = enc.forward(x, {1, 2}, TrainContext::eval());
  REQUIRE(tapped.taps.size() == 2);
  for (const Tensor& t : tapped.taps) REQUIRE(t.shape() == none.final.shape());
  REQUIRE(tapped.final.values() == none.final.values());
}

TEST_CASE("tap N-1 is the exact input of the final block", "[conformer]") {
  std::mt19937_64 rng(5);
  EncoderConfig cfg = small_config();
  ConformerEncoder enc(cfg, 5, rng);
  Tensor x = Tensor::randn({6, cfg.input_dim}, rng);
  EncoderOutput out = enc.forward(x, {cfg.num_layers - 1}, TrainContext::eval());
  ParamMap params;
  ConformerBlock copy;
  {
    // rebuild the final block from registered parameters to apply it alone
    std::mt19937_64 tmp(0);
    copy = ConformerBlock(cfg, tmp);
    ParamMap all;
    enc.register_params(all);
    ParamMap mine;
    copy.register_params(mine, "copy");
    const std::string want = str_cat("enc.block", cfg.num_layers, ".");
    for (auto& [name, t] : mine.items()) {
      std::string src = want + name.substr(5);  // swap "copy." prefix
      Tensor* found = all.find(src);
      REQUIRE(found != nullptr);
      std::copy_n(found->data(), t.numel(), t.mutable_data());
    }
  }
  Tensor refinal = copy(out.taps[0], TrainContext::eval());
  for (int64_t i = 0; i < refinal.numel(); i++)
    REQUIRE(refinal.data()[i] == Catch::Approx(out.final.data()[i]).margin(1e-12));
}

TEST_CASE("eval forward is deterministic, bad taps rejected", "[conformer]") {
  std::mt19937_64 rng(6);
  EncoderConfig cfg = small_config();
  ConformerEncoder enc(cfg, 5, rng);
  Tensor x = Tensor::randn({5, cfg.input_dim}, rng);
  Tensor a = enc.forward(x, {}, TrainContext::eval()).final;
  Tensor b = enc.forward(x, {}, TrainContext::eval()).final;
  REQUIRE(a.values() == b.values());
  REQUIRE_THROWS_AS(enc.forward(x, {0}, TrainContext::eval()), std::invalid_argument);
  REQUIRE_THROWS_AS(enc.forward(x, {cfg.num_layers}, TrainContext::eval()),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(enc.forward(x, {2, 1}, TrainContext::eval()), std::invalid_argument);
}

TEST_CASE("ctc head projects to the extended vocabulary", "[conformer]") {
  std::mt19937_64 rng(7);
  EncoderConfig cfg = small_config();
  ConformerEncoder enc(cfg, 9, rng);
  Tensor x = Tensor::randn({4, cfg.input_dim}, rng);
  Tensor logits = enc.ctc_head(enc.forward(x, {}, TrainContext::eval()).final);
  REQUIRE(logits.shape() == Shape{4, 9});

  // zero weights -> uniform post-softmax rows
  ParamMap params;
  enc.register_params(params);
  for (auto& [name, t] : params.items())
    if (name.find("ctc_head") != std::string::npos)
      std::fill(t.mutable_data(), t.mutable_data() + t.numel(), 0.0);
  Tensor uniform = softmax(enc.ctc_head(enc.forward(x, {}, TrainContext::eval()).final));
  for (int64_t i = 0; i < uniform.numel(); i++)
    REQUIRE(uniform.data()[i] == Catch::Approx(1.0 / 9.0).margin(1e-12));
}

TEST_CASE("parameter count matches the closed form", "[conformer]") {
  std::mt19937_64 rng(8);
  for (int subsample : {1, 2}) {
    EncoderConfig cfg = small_config();
    cfg.subsample = subsample;
    ConformerEncoder enc(cfg, 7, rng);
    ParamMap params;
    enc.register_params(params);
    REQUIRE(params.total_numel() == ConformerEncoder::expected_param_count(cfg, 7));
  }
  EncoderConfig dflt;  // desk-scale defaults
  ConformerEncoder enc(dflt, 33, rng);
  ParamMap params;
  enc.register_params(params);
  REQUIRE(params.total_numel() == ConformerEncoder::expected_param_count(dflt, 33));
}

TEST_CASE("one training step reaches every parameter", "[conformer]") {
  std::mt19937_64 rng(9);
  EncoderConfig cfg = small_config();
  ConformerEncoder enc(cfg, 5, rng);
  ParamMap params;
  enc.register_params(params);
  Tensor x = Tensor::randn({8, cfg.input_dim}, rng);
  std::vector<int> y = {0, 2, 1};
  Tape tape;
  {
    TapeScope scope(tape);
    EncoderOutput out = enc.forward(x, {1}, TrainContext::eval());
    Tensor loss = add(ctc_loss(enc.ctc_head(out.final), y, 4),
                      ctc_loss(enc.ctc_head(out.taps[0]), y, 4));
    tape.backward(loss);
  }
  for (const auto& [name, t] : params.items()) {
    INFO(name);
    REQUIRE(t.has_grad());
    double norm = 0.0;
    for (double g : t.grad()) norm += g * g;
    REQUIRE(norm > 0.0);
  }
}

TEST_CASE("stride-2 frontend halves the frame count", "[conformer]") {
  std::mt19937_64 rng(10);
  EncoderConfig cfg = small_config();
  cfg.subsample = 2;
  ConformerEncoder enc(cfg, 5, rng);
  Tensor x = Tensor::randn({9, cfg.input_dim}, rng);
  EncoderOutput out = enc.forward(x, {}, TrainContext::eval());
  REQUIRE(out.final.shape() == Shape{4, cfg.dim});
}

TEST_CASE("dropout perturbs training forward but never eval", "[conformer]") {
  std::mt19937_64 rng(11);
  EncoderConfig cfg = small_config();
  cfg.dropout = 0.5;
  ConformerEncoder enc(cfg, 5, rng);
  Tensor x = Tensor::randn({5, cfg.input_dim}, rng);
  TrainContext train;
  train.training = true;
  train.dropout = cfg.dropout;
  std::mt19937_64 drop_rng(77);
  train.rng = &drop_rng;
  Tensor a = enc.forward(x, {}, train).final;
  Tensor b = enc.forward(x, {}, train).final;
  REQUIRE(a.values() != b.values());
  Tensor c = enc.forward(x, {}, TrainContext::eval()).final;
  Tensor d = enc.forward(x, {}, TrainContext::eval()).final;
  REQUIRE(c.values() == d.values());
}
