#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numbers>

#include "kflow/backbone.hpp"
#include "kflow/error.hpp"
#include "kflow/ops.hpp"
#include "test_util.hpp"

namespace kflow::backbone {
namespace {

using kflow::testing::random_tensor;

BackboneConfig small_config() {
  BackboneConfig c;
  c.T = 8;
  c.D = 2;
  c.context_dim = 3;
  c.hidden = 8;
  c.heads = 2;
  c.blocks = 2;
  c.d = 4;
  c.fourier_dim = 8;
  c.seed = 11;
  return c;
}

Conditioning random_cond(const BackboneConfig& c, std::size_t B, std::mt19937_64& rng) {
  Tensor events({B, c.T});
  for (std::size_t i = 0; i < events.size(); i += 3) events[i] = 1.0;
  std::vector<double> t(B);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : t) v = u(rng);
  return {events, random_tensor({B, c.context_dim}, rng), t};
}

spectral::FrequencyMask full_mask(std::size_t T) {
  return spectral::select_mask(std::vector<double>(T / 2 + 1, 1.0), 1.0);
}

spectral::FrequencyMask dc_mask(std::size_t T) {
  spectral::FrequencyMask m;
  m.keep.assign(T / 2 + 1, false);
  m.keep[0] = true;
  return m;
}

TEST(FourierEmbed, Examples) {
  const double freqs[] = {1.0, -2.0, 0.37};
  const double t0[] = {0.0};
  const Tensor e0 = gaussian_fourier_embed(t0, freqs);
  ASSERT_EQ(e0.shape(), (Shape{1, 6}));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(e0[i], 0.0);
    EXPECT_EQ(e0[3 + i], 1.0);
  }

  const double ints[] = {1.0, 3.0};
  const double ts[] = {0.3, 1.3};
  const Tensor p = gaussian_fourier_embed(ts, ints);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p[i], p[4 + i], 1e-12);

  // First-order: ‖e(t + h) − e(t)‖ ≈ h·‖e'(t)‖ with ‖e'‖² = Σ (2πf)².
  double deriv = 0.0;
  for (double f : freqs) deriv += std::pow(2.0 * std::numbers::pi * f, 2);
  deriv = std::sqrt(deriv);
  for (double h : {1e-3, 1e-4, 1e-5}) {
    const double pair[] = {0.41, 0.41 + h};
    const Tensor e = gaussian_fourier_embed(pair, freqs);
    double d2 = 0.0;
    for (std::size_t i = 0; i < 6; ++i) d2 += (e[6 + i] - e[i]) * (e[6 + i] - e[i]);
    EXPECT_NEAR(std::sqrt(d2) / h, deriv, deriv * 10.0 * h);
  }
}

TEST(AdaLn, Modulation) {
  std::mt19937_64 rng(1);
  Tape t;
  const Tensor x = random_tensor({2, 5, 4}, rng);
  const Var zero = t.constant(Tensor({2, 4}));
  const Tensor plain = layer_norm(t.constant(x), 1e-6).value();
  EXPECT_LE(max_abs_diff(adaln_modulate(t.constant(x), zero, zero).value(), plain), 1e-15);

  const Tensor shift = random_tensor({2, 4}, rng), scale = random_tensor({2, 4}, rng);
  const Tensor m = adaln_modulate(t.constant(x), t.constant(shift), t.constant(scale)).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t s = 0; s < 5; ++s)
      for (std::size_t h = 0; h < 4; ++h) {
        const std::size_t i = (b * 5 + s) * 4 + h;
        EXPECT_NEAR(m[i], plain[i] * (1.0 + scale[b * 4 + h]) + shift[b * 4 + h], 1e-12);
      }
}

AttentionWeights random_weights(Tape& t, std::size_t H, std::mt19937_64& rng, double temp) {
  return {t.constant(random_tensor({H, H}, rng)), t.constant(random_tensor({H, H}, rng)),
          t.constant(random_tensor({H, H}, rng)), t.constant(random_tensor({H, H}, rng)),
          t.constant(Tensor({1}, {temp}))};
}

TEST(Attention, SingleContextTokenHasUnitWeight) {
  std::mt19937_64 rng(2);
  Tape t;
  const auto w = random_weights(t, 4, rng, 2.0);
  const auto r = qknorm_cross_attention(t.constant(random_tensor({2, 5, 4}, rng, -50, 50)),
                                        t.constant(random_tensor({2, 1, 4}, rng, -50, 50)), w, 2);
  for (double v : r.weights.value().data()) EXPECT_EQ(v, 1.0);
}

TEST(Attention, QueryScaleInvarianceAndLogitBound) {
  std::mt19937_64 rng(3);
  Tape t;
  const double temp = 1.7;
  const auto w = random_weights(t, 6, rng, temp);
  const Tensor tokens = random_tensor({2, 5, 6}, rng), ctx = random_tensor({2, 7, 6}, rng);
  Tensor big = tokens;
  for (double& v : big.data()) v *= 1000.0;
  const auto a = qknorm_cross_attention(t.constant(tokens), t.constant(ctx), w, 3);
  const auto b = qknorm_cross_attention(t.constant(big), t.constant(ctx), w, 3);
  EXPECT_LE(max_abs_diff(a.weights.value(), b.weights.value()), 1e-9);
  for (double v : a.logits.value().data()) EXPECT_LE(std::abs(v), temp + 1e-12);
  for (double v : b.logits.value().data()) EXPECT_LE(std::abs(v), temp + 1e-12);
  EXPECT_THROW(qknorm_cross_attention(t.constant(tokens), t.constant(ctx), w, 4), DimensionError);
}

TEST(Model, ConfigValidation) {
  BackboneConfig c = small_config();
  c.heads = 3;
  EXPECT_THROW(Model{c}, ConfigError);
  c = small_config();
  c.T = 3;
  EXPECT_THROW(Model{c}, ConfigError);
}

TEST(Model, ShapesSumAndDeterminism) {
  const auto cfg = small_config();
  Model m(cfg);
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({3, cfg.T, cfg.D}, rng);
  const auto cond = random_cond(cfg, 3, rng);
  const auto mask = dc_mask(cfg.T);
  auto run = [&] {
    Tape t;
    Binder p(t, m.params(), false);
    const auto f = m.forward(p, t.constant(x), cond, mask, koopman::DmdSolver::Cholesky);
    return std::array<Tensor, 3>{f.v_inv.value(), f.v_var.value(), f.v_total.value()};
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a[0].shape(), x.shape());
  EXPECT_EQ(a[2].shape(), x.shape());
  for (int k = 0; k < 3; ++k) EXPECT_EQ(a[k], b[k]);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(a[2][i], a[0][i] + a[1][i]);

  Tape t;
  Binder p(t, m.params(), false);
  EXPECT_THROW(m.forward(p, t.constant(Tensor({3, cfg.T, 3})), cond, mask, koopman::DmdSolver::Svd), DimensionError);
}

TEST(Model, FullMaskSilencesVariantBranch) {
  const auto cfg = small_config();
  Model m(cfg);
  std::mt19937_64 rng(5);
  Tape t;
  Binder p(t, m.params(), false);
  const auto f = m.forward(p, t.constant(random_tensor({2, cfg.T, cfg.D}, rng)), random_cond(cfg, 2, rng),
                           full_mask(cfg.T), koopman::DmdSolver::Svd);
  EXPECT_LE(frobenius_norm(f.v_var.value()), 1e-12);
}

TEST(Model, AdaLnZeroInitLeavesEmbeddingPath) {
  const auto cfg = small_config();
  Model m(cfg);
  std::mt19937_64 rng(6);
  const std::size_t B = 2;
  const Tensor x = random_tensor({B, cfg.T, cfg.D}, rng);
  const auto cond = random_cond(cfg, B, rng);
  Tape t;
  Binder p(t, m.params(), false);
  const Tensor h = m.trunk(p, t.constant(x), cond).value();

  const auto& ps = m.params();
  const Tensor& w = ps.at("backbone.in.w").value;
  const Tensor& bias = ps.at("backbone.in.b").value;
  const Tensor& ev = ps.at("backbone.in.event").value;
  const Tensor& pos = ps.at("backbone.pos").value;
  const std::size_t H = cfg.hidden;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < cfg.T; ++s)
      for (std::size_t j = 0; j < H; ++j) {
        double want = bias[j] + cond.events[b * cfg.T + s] * ev[j] + pos[s * H + j];
        for (std::size_t d = 0; d < cfg.D; ++d) want += x[(b * cfg.T + s) * cfg.D + d] * w[d * H + j];
        EXPECT_NEAR(h[(b * cfg.T + s) * H + j], want, 1e-12);
      }
}

TEST(Model, ZeroGatesBlockConditioningAtInit) {
  const auto cfg = small_config();
  Model m(cfg);
  std::mt19937_64 rng(7);
  Tape t;
  Binder p(t, m.params(), true);
  const auto f = m.forward(p, t.constant(random_tensor({2, cfg.T, cfg.D}, rng)), random_cond(cfg, 2, rng),
                           dc_mask(cfg.T), koopman::DmdSolver::Cholesky);
  t.backward(kflow::testing::weighted_sum(f.v_total));
  EXPECT_GT(frobenius_norm(*m.params().at("backbone.block0.ada.w").grad), 0.0);
  for (const char* name : {"backbone.ctx.w", "backbone.time.w1"}) {
    const auto& g = m.params().at(name).grad;
    EXPECT_TRUE(!g.has_value() || frobenius_norm(*g) == 0.0) << name;
  }
}

TEST(Model, GradientReachesConditioningProjections) {
  const auto cfg = small_config();
  Model m(cfg);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 0.05);
  for (auto& [name, prm] : m.params())
    for (double& v : prm.value.data()) v += n(rng);
  Tape t;
  Binder p(t, m.params(), true);
  const auto f = m.forward(p, t.constant(random_tensor({2, cfg.T, cfg.D}, rng)), random_cond(cfg, 2, rng),
                           dc_mask(cfg.T), koopman::DmdSolver::Cholesky);
  t.backward(kflow::testing::weighted_sum(f.v_total));
  for (const char* name : {"backbone.block0.ada.w", "backbone.block1.ada.b", "backbone.ctx.w", "backbone.time.w1"}) {
    const auto& g = m.params().at(name).grad;
    ASSERT_TRUE(g.has_value()) << name;
    EXPECT_GT(frobenius_norm(*g), 0.0) << name;
  }
}

TEST(Model, FiniteForLargeInputs) {
  const auto cfg = small_config();
  Model m(cfg);
  std::mt19937_64 rng(8);
  Tape t;
  Binder p(t, m.params(), false);
  const auto f = m.forward(p, t.constant(random_tensor({4, cfg.T, cfg.D}, rng, -10, 10)), random_cond(cfg, 4, rng),
                           dc_mask(cfg.T), koopman::DmdSolver::Svd);
  EXPECT_TRUE(f.v_total.value().all_finite());
  EXPECT_TRUE(f.h_in.value().all_finite());
}

TEST(Model, EvaluateBeforeTrainingUsesTransientMask) {
  const auto cfg = small_config();
  Model m(cfg);
  std::mt19937_64 rng(9);
  Tape t;
  const auto f = m.evaluate(t, random_tensor({2, cfg.T, cfg.D}, rng), random_cond(cfg, 2, rng));
  EXPECT_TRUE(f.v_total.value().all_finite());
  EXPECT_FALSE(m.tracker().ready());
}

TEST(Model, CheckpointRoundTrip) {
  const auto cfg = small_config();
  Model m(cfg);
  std::mt19937_64 rng(10);
  const Tensor x = random_tensor({2, cfg.T, cfg.D}, rng);
  const auto cond = random_cond(cfg, 2, rng);
  m.tracker().observe(random_tensor({2, cfg.T, cfg.hidden}, rng));
  for (auto& [name, p] : m.params())
    for (double& v : p.value.data()) v += 0.01;

  const Model back = Model::from_checkpoint(m.to_checkpoint());
  EXPECT_EQ(back.tracker().mask().keep, m.tracker().mask().keep);
  Model copy = back;
  Tape t1, t2;
  EXPECT_EQ(m.evaluate(t1, x, cond).v_total.value(), copy.evaluate(t2, x, cond).v_total.value());

  Checkpoint bad = m.to_checkpoint();
  bad.tensors.at("koopman.inv.K") = Tensor({2, 2});
  EXPECT_THROW(Model::from_checkpoint(bad), FormatError);
}

}  // namespace
}  // namespace kflow::backbone
