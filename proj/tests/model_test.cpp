#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "peft/model/gradcheck.hpp"
#include "peft/model/snapshot.hpp"
#include "peft/model/transformer.hpp"
#include "peft/numerics/errors.hpp"
#include "peft/numerics/linalg.hpp"
#include "test_support.hpp"

using namespace peft;
using namespace peft::testing;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.n_layers = 1;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.vocab = 6;
  c.seq_len = 5;
  c.adapter_targets = {Target::attn_q, Target::attn_k, Target::attn_v, Target::attn_o, Target::ff_in, Target::ff_out};
  return c;
}

Batch random_batch(std::mt19937_64& rng, const ModelConfig& c, std::size_t size, std::size_t len) {
  std::uniform_int_distribution<int> tok(0, int(c.vocab) - 1);
  Batch b{size, len, {}, {}};
  for (std::size_t k = 0; k < size * len; ++k) {
    b.tokens.push_back(tok(rng));
    b.targets.push_back(k % 4 == 3 ? -1 : tok(rng));
  }
  return b;
}

enum class Kind { lora, butterfly, cayley, hybrid, unitary };

AdapterState random_adapter(Kind kind, const Matrix& w0, std::mt19937_64& rng) {
  const std::size_t o = w0.rows(), i = w0.cols();
  std::uniform_real_distribution<double> ud(-0.5, 0.5);
  auto rand_lora = [&] {
    LoraAdapter ad{random_matrix(rng, o, 2, 0.3), random_matrix(rng, 2, i, 0.3), 4.0, std::nullopt};
    return ad;
  };
  auto rand_cayley = [&] {
    auto st = BoftState::cayley_identity(o, 0.4);
    for (auto& x : st.q.generator()) x = ud(rng);
    st.r_cache = cayley_orthonormal(st.q.dense(), st.eta);
    return st;
  };
  switch (kind) {
    case Kind::lora:
      return rand_lora();
    case Kind::butterfly: {
      auto st = BoftState::butterfly_identity(o, 2, 0.1);
      for (auto& l : st.levels)
        for (auto& a : l.angles) a = ud(rng);
      return st;
    }
    case Kind::cayley:
      return rand_cayley();
    case Kind::hybrid:
      return HybridState{rand_lora(), rand_cayley(), 0.3, 1e-2};
    case Kind::unitary: {
      auto p = UnitaryParam::identity_like(o / 2, rng);
      for (auto* th : {&p.d1, &p.d2, &p.d3})
        for (auto& x : *th) x = 3 * ud(rng);
      p.u = unitary_compose(p);
      return p;
    }
  }
  return {};
}

ModelWeights model_with(Kind kind, std::mt19937_64& rng, ModelConfig cfg = small_config()) {
  auto w = ModelWeights::random_init(cfg, rng);
  for (auto& layer : w.layers)
    for (auto t : cfg.adapter_targets) {
      auto& s = layer.slot(t);
      if (kind == Kind::unitary && s.w0.rows() != s.w0.cols()) continue;
      s.adapter = random_adapter(kind, s.w0, rng);
    }
  return w;
}

}  // namespace

TEST(Forward, ZeroWeightsGiveUniformLogits) {
  std::mt19937_64 rng(1);
  auto cfg = small_config();
  auto w = ModelWeights::random_init(cfg, rng);
  for (auto* m : {&w.tok_emb, &w.pos_emb, &w.unembed}) *m = Matrix(m->rows(), m->cols());
  for (auto& layer : w.layers)
    for (auto& s : layer.slots) s.w0 = Matrix(s.w0.rows(), s.w0.cols());
  auto b = random_batch(rng, cfg, 2, 5);
  auto fr = forward(w, b);
  for (double v : fr.logits.data()) EXPECT_EQ(v, 0.0);
  EXPECT_NEAR(loss(fr.logits, b.targets), std::log(6.0), 1e-15);
}

TEST(Forward, BatchOrderPermutesLogits) {
  std::mt19937_64 rng(2);
  auto cfg = small_config();
  auto w = ModelWeights::random_init(cfg, rng);
  auto b = random_batch(rng, cfg, 3, 5);
  Batch swapped = b;
  std::rotate(swapped.tokens.begin(), swapped.tokens.begin() + 5, swapped.tokens.end());
  auto l1 = forward(w, b).logits, l2 = forward(w, swapped).logits;
  for (std::size_t r = 0; r < 15; ++r)
    for (std::size_t c = 0; c < cfg.vocab; ++c) EXPECT_EQ(l2(r, c), l1((r + 5) % 15, c));
}

TEST(Forward, ZeroDeltaAdaptersMatchBaseBitForBit) {
  std::mt19937_64 rng(3);
  auto cfg = small_config();
  auto base = ModelWeights::random_init(cfg, rng);
  auto b = random_batch(rng, cfg, 2, 5);
  const auto ref = forward(base, b).logits;
  for (int kind = 0; kind < 3; ++kind) {
    auto w = base;
    for (auto& layer : w.layers)
      for (auto t : cfg.adapter_targets) {
        auto& s = layer.slot(t);
        if (kind == 0) s.adapter = LoraAdapter::zero_delta(s.w0.rows(), s.w0.cols(), 2, 4.0, rng);
        if (kind == 1) s.adapter = BoftState::cayley_identity(s.w0.rows(), 0.1);
        if (kind == 2) s.adapter = BoftState::butterfly_identity(s.w0.rows(), 2, 0.1);
      }
    EXPECT_EQ(forward(w, b).logits, ref) << "kind " << kind;
  }
}

TEST(Forward, DeterministicAndRejectsBadTokens) {
  std::mt19937_64 rng(4);
  auto cfg = small_config();
  auto w = model_with(Kind::hybrid, rng);
  auto b = random_batch(rng, cfg, 2, 4);
  EXPECT_EQ(forward(w, b).logits, forward(w, b).logits);
  b.tokens[3] = int(cfg.vocab);
  EXPECT_THROW(forward(w, b), InvalidInput);
  Batch too_long = random_batch(rng, cfg, 1, 6);
  EXPECT_THROW(forward(w, too_long), InvalidInput);
}

TEST(Loss, AnalyticValues) {
  Matrix uniform(4, 16);
  std::vector<int> t{0, 5, 9, 15};
  EXPECT_NEAR(loss(uniform, t), std::log(16.0), 1e-15);
  Matrix sharp(2, 16);
  sharp(0, 3) = 200.0;
  sharp(1, 7) = 200.0;
  std::vector<int> st{3, 7};
  EXPECT_LT(loss(sharp, st), 1e-80);
  EXPECT_GE(loss(sharp, st), 0.0);
}

TEST(Loss, MatchesNaiveSummation) {
  std::mt19937_64 rng(5);
  auto logits = random_matrix(rng, 20, 7, 3.0);
  std::vector<int> t;
  std::uniform_int_distribution<int> tok(-1, 6);
  for (int k = 0; k < 20; ++k) t.push_back(tok(rng));
  double sum = 0.0;
  int count = 0;
  for (std::size_t r = 0; r < 20; ++r) {
    if (t[r] < 0) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < 7; ++c) z += std::exp(logits(r, c));
    sum += -std::log(std::exp(logits(r, std::size_t(t[r]))) / z);
    ++count;
  }
  EXPECT_NEAR(loss(logits, t), sum / count, 1e-12);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  auto logits = random_matrix(rng, 5, 4);
  std::vector<int> t{0, -1, 3, 2, 1};
  auto g = loss_grad(logits, t);
  auto fd = finite_diff_grad(
      [&](std::span<const double> p) { return loss(Matrix(5, 4, Vector(p.begin(), p.end())), t); }, logits.values());
  EXPECT_LT(max_rel_error(g.values(), fd), 1e-7);
}

TEST(Backward, SaturatedOptimumHasNearZeroGradient) {
  std::mt19937_64 rng(7);
  auto cfg = small_config();
  auto w = model_with(Kind::lora, rng);
  auto b = random_batch(rng, cfg, 2, 5);
  w.unembed *= 1e3;
  auto logits = forward(w, b).logits;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    b.targets[r] = int(std::max_element(row.begin(), row.end()) - row.begin());
  }
  auto lg = loss_and_grad(w, b);
  EXPECT_LT(lg.loss, 1e-10);
  for (const auto& sg : lg.grads.layers[0])
    if (sg) EXPECT_LT(frobenius_norm(sg->w_eff), 1e-8);
}

TEST(Backward, FrozenBaseGetsNoGradient) {
  std::mt19937_64 rng(8);
  auto cfg = small_config();
  cfg.adapter_targets = {Target::attn_q, Target::attn_v};
  auto w = model_with(Kind::lora, rng, cfg);
  auto lg = loss_and_grad(w, random_batch(rng, cfg, 2, 5));
  EXPECT_FALSE(lg.grads.tok_emb || lg.grads.pos_emb || lg.grads.unembed);
  for (auto t : kAllTargets) {
    const bool adapted = cfg.adapter_targets.count(t) > 0;
    EXPECT_EQ(lg.grads.layers[0][std::size_t(t)].has_value(), adapted) << target_name(t);
  }
}

class GradientCheck : public ::testing::TestWithParam<Kind> {};

TEST_P(GradientCheck, AllTrainableParametersMatchCentralDifferences) {
  std::mt19937_64 rng(9);
  auto cfg = small_config();
  auto w = model_with(GetParam(), rng);
  auto report = gradient_check(w, random_batch(rng, cfg, 3, 5));
  EXPECT_FALSE(report.classes.empty());
  for (const auto& c : report.classes) EXPECT_LE(c.max_rel_error, 1e-4) << c.name;
}

INSTANTIATE_TEST_SUITE_P(Modes, GradientCheck,
                         ::testing::Values(Kind::lora, Kind::butterfly, Kind::cayley, Kind::hybrid, Kind::unitary));

TEST(GradientCheckFull, BaseWeightsAndEmbeddings) {
  std::mt19937_64 rng(10);
  auto cfg = small_config();
  auto w = ModelWeights::random_init(cfg, rng);
  w.full_ft = true;
  auto report = gradient_check(w, random_batch(rng, cfg, 2, 5));
  EXPECT_EQ(report.classes.size(), 3u + 6u);
  for (const auto& c : report.classes) EXPECT_LE(c.max_rel_error, 1e-4) << c.name;
}

TEST(GradientCheckTwoLayer, HybridOnDefaultTargets) {
  std::mt19937_64 rng(11);
  auto cfg = small_config();
  cfg.n_layers = 2;
  auto w = model_with(Kind::hybrid, rng, cfg);
  auto report = gradient_check(w, random_batch(rng, cfg, 2, 5));
  EXPECT_LE(report.max_rel_error(), 1e-4);
}

TEST(EffectiveWeight, Examples) {
  std::mt19937_64 rng(12);
  auto w = ModelWeights::random_init(small_config(), rng);
  auto& s = w.layers[0].slot(Target::attn_q);
  EXPECT_EQ(effective_weight(w.layers[0], Target::attn_q), s.w0);
  s.adapter = LoraAdapter::zero_delta(8, 8, 2, 4.0, rng);
  EXPECT_EQ(effective_weight(w.layers[0], Target::attn_q), s.w0);

  LoraAdapter lora{random_matrix(rng, 8, 2), random_matrix(rng, 2, 8), 4.0, std::nullopt};
  s.adapter = lora;
  const auto lora_only = effective_weight(w.layers[0], Target::attn_q);
  auto boft = BoftState::cayley_identity(8, 0.3);
  for (auto& x : boft.q.generator()) x = 0.2;
  boft.r_cache = cayley_orthonormal(boft.q.dense(), boft.eta);
  s.adapter = HybridState{lora, boft, 1.0, 1e-2};
  EXPECT_EQ(effective_weight(w.layers[0], Target::attn_q), lora_only);

  w.layers[0].slot(Target::attn_k).w0 = Matrix();
  EXPECT_THROW(effective_weight(w.layers[0], Target::attn_k), InvalidInput);
}

TEST(UnitarySublayer, BackwardIsometry) {
  std::mt19937_64 rng(13);
  auto p = UnitaryParam::identity_like(16, rng);
  const auto w = realify(p.u);
  for (int trial = 0; trial < 20; ++trial) {
    auto dy = random_matrix(rng, 24, 32);
    EXPECT_NEAR(frobenius_norm(matmul(dy, w)), frobenius_norm(dy), 1e-10 * frobenius_norm(dy));
  }
}

TEST(Config, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate(true));
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), InvalidInput);
  c.n_heads = 2;
  c.d_model = 24;
  EXPECT_THROW(c.validate(true), InvalidInput);
  c.d_model = 32;
  c.adapter_targets.insert(Target::ff_in);
  EXPECT_THROW(c.validate(true), InvalidInput);
  EXPECT_EQ(parse_target("ff_out"), Target::ff_out);
  EXPECT_FALSE(parse_target("ffout"));
}

class SnapshotRoundTrip : public ::testing::TestWithParam<Kind> {};

TEST_P(SnapshotRoundTrip, BitExact) {
  std::mt19937_64 rng(14);
  auto w = model_with(GetParam(), rng);
  const auto bytes = encode_snapshot(w);
  auto back = decode_snapshot(bytes);
  EXPECT_EQ(encode_snapshot(back), bytes);
  auto b = random_batch(rng, w.cfg, 2, 5);
  EXPECT_EQ(forward(back, b).logits, forward(w, b).logits);
  EXPECT_EQ(back.cfg, w.cfg);
}

INSTANTIATE_TEST_SUITE_P(Modes, SnapshotRoundTrip,
                         ::testing::Values(Kind::lora, Kind::butterfly, Kind::cayley, Kind::hybrid, Kind::unitary));

TEST(Snapshot, FileRoundTripAndCorruption) {
  std::mt19937_64 rng(15);
  auto w = ModelWeights::random_init(small_config(), rng);
  w.full_ft = true;
  const auto path = std::filesystem::temp_directory_path() / "peft_snapshot_test.bin";
  save_snapshot(w, path);
  auto back = load_snapshot(path);
  EXPECT_TRUE(back.full_ft);
  EXPECT_EQ(encode_snapshot(back), encode_snapshot(w));
  std::filesystem::remove(path);

  auto bytes = encode_snapshot(w);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_snapshot(bad_magic), InvalidInput);
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(decode_snapshot(bytes), InvalidInput);
}

TEST(ParameterCount, MatchesClosedForms) {
  std::mt19937_64 rng(16);
  ModelConfig cfg;  // defaults: 2 layers, d=32, targets q and v
  auto w = ModelWeights::random_init(cfg, rng);
  const std::size_t d = 32, v = 16, T = 16, ff = 64;
  EXPECT_EQ(w.base_parameter_count(), 2 * v * d + T * d + 2 * (4 * d * d + 2 * d * ff));
  for (auto& layer : w.layers)
    for (auto t : cfg.adapter_targets) layer.slot(t).adapter = LoraAdapter::zero_delta(d, d, 16, 32, rng);
  EXPECT_EQ(trainable_parameter_count(w), 2 * 2 * 16 * (d + d));
}
