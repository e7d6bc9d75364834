#include <gtest/gtest.h>

#include <cmath>

#include "kflow/error.hpp"
#include "kflow/ops.hpp"
#include "kflow/spectral.hpp"
#include "test_util.hpp"

namespace kflow::spectral {
namespace {

using kflow::testing::random_tensor;

FrequencyMask keep_bins(std::size_t bins, std::initializer_list<std::size_t> kept) {
  FrequencyMask m;
  m.keep.assign(bins, false);
  for (std::size_t k : kept) m.keep[k] = true;
  return m;
}

double sq_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return s;
}

TEST(AmplitudeSpectrum, Examples) {
  const auto c = amplitude_spectrum(Tensor({1, 4, 1}, {3, 3, 3, 3}));
  EXPECT_NEAR(c[0], 12.0, 1e-12);
  EXPECT_NEAR(c[1], 0.0, 1e-12);
  EXPECT_NEAR(c[2], 0.0, 1e-12);

  const auto a = amplitude_spectrum(Tensor({1, 4, 1}, {1, 0, -1, 0}));
  EXPECT_NEAR(a[0], 0.0, 1e-12);
  EXPECT_NEAR(a[1], 2.0, 1e-12);
  EXPECT_NEAR(a[2], 0.0, 1e-12);

  std::mt19937_64 rng(1);
  const Tensor h = random_tensor({3, 8, 2}, rng);
  Tensor h3 = h;
  for (double& v : h3.data()) v *= 2.5;
  const auto s1 = amplitude_spectrum(h), s3 = amplitude_spectrum(h3);
  for (std::size_t k = 0; k < s1.size(); ++k) {
    EXPECT_GE(s1[k], 0.0);
    EXPECT_NEAR(s3[k], 2.5 * s1[k], 1e-12);
  }
  EXPECT_THROW(amplitude_spectrum(Tensor({1, 3, 1})), DimensionError);
}

TEST(SelectMask, Examples) {
  const double amps[] = {5, 3, 1, 1};
  const auto m = select_mask(amps, 0.8);
  EXPECT_EQ(m.keep, (std::vector<bool>{true, true, false, false}));

  const auto all = select_mask(amps, 1.0);
  EXPECT_EQ(all.kept(), 4u);

  const double low_dc[] = {0.1, 3, 2, 1};
  const auto tiny = select_mask(low_dc, 1e-9);
  // The top bin crosses any tiny threshold; DC rides along.
  EXPECT_TRUE(tiny.keep[0]);
  EXPECT_TRUE(tiny.keep[1]);
  EXPECT_EQ(tiny.kept(), 2u);

  const double zeros[] = {0, 0, 0};
  EXPECT_EQ(select_mask(zeros, 0.5).kept(), 1u);
  EXPECT_THROW(select_mask(amps, 0.0), ConfigError);
  EXPECT_THROW(select_mask(amps, 1.5), ConfigError);
}

TEST(SelectMask, TiesGoToLowerBin) {
  const double amps[] = {0, 2, 2, 2};
  const auto m = select_mask(amps, 0.3);
  EXPECT_EQ(m.keep, (std::vector<bool>{true, true, false, false}));
}

TEST(SelectMask, KeptSetIsMinimalPrefix) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor a = random_tensor({9}, rng, 0.0, 5.0);
    const double alpha = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    const auto m = select_mask(a.data(), alpha);
    double total = 0.0, kept = 0.0, smallest_kept = INFINITY;
    for (std::size_t k = 0; k < 9; ++k) {
      total += a[k] * a[k];
      if (m.keep[k]) {
        kept += a[k] * a[k];
        if (k != 0) smallest_kept = std::min(smallest_kept, a[k]);
      }
    }
    EXPECT_TRUE(m.keep[0]);
    EXPECT_GE(kept + 1e-12, alpha * total);
    // Dropping the weakest non-DC kept bin must fall short of alpha
    // (unless DC alone was already enough).
    if (std::isfinite(smallest_kept)) {
      double without = 0.0, top = 0.0;
      for (std::size_t k = 0; k < 9; ++k) {
        if (m.keep[k] && a[k] != smallest_kept) without += a[k] * a[k];
      }
      for (std::size_t k = 0; k < 9; ++k)
        if (m.keep[k] && k != 0) top = std::max(top, a[k]);
      if (!m.keep[0] || a[0] < top) EXPECT_LT(without - a[0] * a[0], alpha * total);
    }
  }
}

TEST(FourierFilter, Examples) {
  Tape t;
  const Var h = t.constant(Tensor({1, 4, 1}, {2, 0, 0, 0}));
  const auto s = fourier_filter(h, keep_bins(3, {0}));
  const double inv[] = {0.5, 0.5, 0.5, 0.5}, var[] = {1.5, -0.5, -0.5, -0.5};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(s.x_inv.value()[i], inv[i], 1e-12);
    EXPECT_NEAR(s.x_var.value()[i], var[i], 1e-12);
  }

  std::mt19937_64 rng(3);
  const Tensor r = random_tensor({2, 8, 3}, rng);
  const auto all = fourier_filter(t.constant(r), keep_bins(5, {0, 1, 2, 3, 4}));
  EXPECT_LE(max_abs_diff(all.x_inv.value(), r), 1e-12);
  EXPECT_LE(frobenius_norm(all.x_var.value()), 1e-12);

  EXPECT_THROW(fourier_filter(t.constant(r), keep_bins(4, {0})), DimensionError);
}

TEST(FourierFilter, ComplementParsevalIdempotenceZeroMean) {
  std::mt19937_64 rng(4);
  for (std::size_t T : {4u, 7u, 16u}) {
    const std::size_t bins = T / 2 + 1;
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor h = random_tensor({3, T, 4}, rng, -2, 2);
      FrequencyMask m = keep_bins(bins, {0});
      for (std::size_t k = 1; k < bins; ++k) m.keep[k] = (rng() & 1) != 0;
      Tape t;
      const auto s = fourier_filter(t.constant(h), m);
      const Tensor xi = s.x_inv.value();
      const Tensor xv = s.x_var.value();
      for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(xi[i] + xv[i], h[i], 1e-9);
      EXPECT_NEAR(sq_norm(xi) + sq_norm(xv), sq_norm(h), 1e-9);

      const auto again = fourier_filter(t.constant(xi), m);
      EXPECT_LE(max_abs_diff(again.x_inv.value(), xi), 1e-9);

      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t d = 0; d < 4; ++d) {
          double mean = 0.0;
          for (std::size_t s2 = 0; s2 < T; ++s2) mean += xv[(b * T + s2) * 4 + d];
          EXPECT_NEAR(mean / static_cast<double>(T), 0.0, 1e-9);
        }
    }
  }
}

TEST(FourierFilter, BranchGradientsSumToTwiceInput) {
  std::mt19937_64 rng(5);
  const Tensor h = random_tensor({2, 8, 3}, rng);
  const auto m = keep_bins(5, {0, 2});
  Tape t;
  const Var x = t.leaf(h);
  const auto s = fourier_filter(x, m);
  t.backward(add(sum(square(s.x_inv)), sum(square(s.x_var))));
  const Tensor g = *x.grad();
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(g[i], 2.0 * h[i], 1e-8);
}

TEST(MaskEma, Examples) {
  const std::vector<double> run{1, 2, 3}, batch{4, 0, 1};
  EXPECT_EQ(update_mask_ema(run, batch, 0.0), batch);

  const double eps = 1e-6;
  const auto same = update_mask_ema(batch, batch, 1.0 - eps);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(same[i], batch[i], eps);

  // Closed form: running_k = s + decay^k·(running_0 − s).
  std::vector<double> r = run;
  const double decay = 0.9;
  for (int k = 1; k <= 50; ++k) {
    r = update_mask_ema(r, batch, decay);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r[i], batch[i] + std::pow(decay, k) * (run[i] - batch[i]), 1e-12);
  }
  EXPECT_THROW(update_mask_ema(run, std::vector<double>{1.0}, 0.5), DimensionError);
}

TEST(SpectralTracker, SeedsFreezesAndRoundTrips) {
  SpectralTracker tr(8, 0.9, 0.5);
  EXPECT_FALSE(tr.ready());
  EXPECT_THROW(tr.mask(), ContractError);

  std::mt19937_64 rng(6);
  const Tensor a = random_tensor({4, 8, 2}, rng);
  tr.observe(a);
  EXPECT_EQ(tr.mask().source_spectrum, amplitude_spectrum(a));

  const Tensor b = random_tensor({4, 8, 2}, rng);
  tr.observe(b);
  EXPECT_EQ(tr.mask().source_spectrum, update_mask_ema(amplitude_spectrum(a), amplitude_spectrum(b), 0.5));

  tr.freeze();
  const auto frozen = tr.mask().source_spectrum;
  tr.observe(random_tensor({4, 8, 2}, rng, -9, 9));
  EXPECT_EQ(tr.mask().source_spectrum, frozen);

  const auto back = SpectralTracker::from_tensor(tr.to_tensor(), 8, 0.5);
  EXPECT_EQ(back.mask().keep, tr.mask().keep);
  EXPECT_EQ(back.mask().source_spectrum, tr.mask().source_spectrum);
  EXPECT_EQ(back.alpha(), 0.9);
  EXPECT_THROW(SpectralTracker::from_tensor(tr.to_tensor(), 16, 0.5), FormatError);
}

}  // namespace
}  // namespace kflow::spectral
