#include <gtest/gtest.h>

#include <cmath>

#include "kflow/error.hpp"
#include "kflow/koopman.hpp"
#include "kflow/linalg.hpp"
#include "kflow/ops.hpp"
#include "test_util.hpp"

namespace kflow::koopman {
namespace {

using kflow::testing::gradient_error;
using kflow::testing::random_tensor;

Tensor mat(const Tensor& a, const Tensor& b) {
  Tape t;
  return matmul(t.constant(a), t.constant(b)).value();
}

Tensor transposed(const Tensor& a) {
  Tensor o({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) o.at(j, i) = a.at(i, j);
  return o;
}

Tensor columns(const Tensor& z, std::size_t from, std::size_t count) {
  Tensor o({z.dim(0), count});
  for (std::size_t i = 0; i < z.dim(0); ++i)
    for (std::size_t j = 0; j < count; ++j) o.at(i, j) = z.at(i, from + j);
  return o;
}

// Gauss–Jordan inverse with partial pivoting; independent of the Cholesky path.
Tensor explicit_inverse(Tensor a) {
  const std::size_t n = a.dim(0);
  Tensor inv = Tensor::identity(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a.at(r, c)) > std::abs(a.at(piv, c))) piv = r;
    for (std::size_t j = 0; j < n; ++j) {
      std::swap(a.at(c, j), a.at(piv, j));
      std::swap(inv.at(c, j), inv.at(piv, j));
    }
    const double p = a.at(c, c);
    for (std::size_t j = 0; j < n; ++j) {
      a.at(c, j) /= p;
      inv.at(c, j) /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a.at(r, c);
      for (std::size_t j = 0; j < n; ++j) {
        a.at(r, j) -= f * a.at(c, j);
        inv.at(r, j) -= f * inv.at(c, j);
      }
    }
  }
  return inv;
}

Tensor normal_equations(const Tensor& z, double lambda) {
  const std::size_t w = z.dim(1);
  const Tensor x = columns(z, 0, w - 1), y = columns(z, 1, w - 1);
  Tensor a = mat(x, transposed(x));
  for (std::size_t i = 0; i < a.dim(0); ++i) a.at(i, i) += lambda;
  return mat(mat(y, transposed(x)), explicit_inverse(a));
}

double spectral_norm(const Tensor& a) {
  return linalg::truncated_svd(a, 1).sigma[0];
}

TEST(InvariantPath, Examples) {
  Tape t;
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({2, 5, 3}, rng);
  const Var eye = t.constant(Tensor::identity(3));
  EXPECT_LE(max_abs_diff(invariant_path(t.constant(x), eye, eye, eye).value(), x), 1e-15);
  EXPECT_EQ(frobenius_norm(invariant_path(t.constant(x), eye, t.constant(Tensor({3, 3})), eye).value()), 0.0);

  const Tensor ones = Tensor::full({1, 4, 2}, 1.0);
  const Tensor half = Tensor({2, 2}, {0.5, 0, 0, 0.5});
  const Var e2 = t.constant(Tensor::identity(2));
  const Tensor out = invariant_path(t.constant(ones), e2, t.constant(half), e2).value();
  for (double v : out.data()) EXPECT_DOUBLE_EQ(v, 0.5);

  EXPECT_THROW(invariant_path(t.constant(x), eye, t.constant(Tensor::identity(2)), eye), DimensionError);
}

TEST(InvariantPath, IsLinear) {
  std::mt19937_64 rng(2);
  Tape t;
  const Var enc = t.constant(random_tensor({3, 5}, rng)), k = t.constant(random_tensor({5, 5}, rng)),
            dec = t.constant(random_tensor({5, 3}, rng));
  const Tensor x = random_tensor({2, 6, 3}, rng), y = random_tensor({2, 6, 3}, rng);
  const double a = 1.7, b = -0.4;
  Tensor combo(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) combo[i] = a * x[i] + b * y[i];
  const Tensor fx = invariant_path(t.constant(x), enc, k, dec).value();
  const Tensor fy = invariant_path(t.constant(y), enc, k, dec).value();
  const Tensor fc = invariant_path(t.constant(combo), enc, k, dec).value();
  for (std::size_t i = 0; i < fc.size(); ++i) EXPECT_NEAR(fc[i], a * fx[i] + b * fy[i], 1e-9);
}

TEST(DmdFit, ScalarExamples) {
  const Tensor z({1, 3}, {1, 0.5, 0.25});
  EXPECT_NEAR(dmd_fit(z, 0.0).item(), 0.5, 1e-15);
  EXPECT_NEAR(dmd_fit(z, 1e-3).item(), 0.625 / 1.251, 1e-15);
  EXPECT_NEAR(dmd_fit(z, 1e-3).item(), 0.49960, 5e-6);
  EXPECT_EQ(frobenius_norm(dmd_fit(Tensor({3, 4}), 1e-3)), 0.0);
  EXPECT_THROW(dmd_fit(Tensor({2, 1}), 1e-3), DimensionError);
}

TEST(DmdFit, MatchesExplicitNormalEquations) {
  std::mt19937_64 rng(3);
  for (std::size_t d = 1; d <= 4; ++d)
    for (double lambda : {1e-3, 1e-1, 1.0}) {
      const Tensor z = random_tensor({d, 7}, rng);
      EXPECT_LE(max_abs_diff(dmd_fit(z, lambda), normal_equations(z, lambda)), 1e-9) << "d=" << d;
    }
}

TEST(DmdFitSvd, AgreesWithCholeskyAtFullRank) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor z = random_tensor({8, 4}, rng);
    EXPECT_LE(max_abs_diff(dmd_fit_svd(z, 1e-3, 3), dmd_fit(z, 1e-3)), 1e-8);
  }
  const Tensor z = random_tensor({8, 4}, rng);
  EXPECT_EQ(frobenius_norm(dmd_fit_svd(z, 1e-3, 0)), 0.0);
  EXPECT_THROW(dmd_fit_svd(z, 1e-3, 4), ContractError);
}

TEST(DmdFit, RecoversKnownLinearOperator) {
  // Z_{τ+1} = A·Z_τ with a slowly rotating, mildly contracting A.
  const std::size_t d = 3, w = 8;
  const double c = std::cos(0.4), s = std::sin(0.4);
  const Tensor a({3, 3}, {0.95 * c, -0.95 * s, 0, 0.95 * s, 0.95 * c, 0, 0, 0, 1.02});
  Tensor z({d, w});
  z.at(0, 0) = 1.0;
  z.at(1, 0) = -0.3;
  z.at(2, 0) = 0.7;
  for (std::size_t j = 1; j < w; ++j)
    for (std::size_t i = 0; i < d; ++i) {
      double v = 0.0;
      for (std::size_t k = 0; k < d; ++k) v += a.at(i, k) * z.at(k, j - 1);
      z.at(i, j) = v;
    }
  for (const Tensor& k : {dmd_fit(z, 1e-6), dmd_fit_svd(z, 1e-6, 3)}) {
    const Tensor pred = mat(k, columns(z, 0, w - 1));
    const Tensor next = columns(z, 1, w - 1);
    double err = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      err += (pred[i] - next[i]) * (pred[i] - next[i]);
      ref += next[i] * next[i];
    }
    EXPECT_LE(std::sqrt(err / ref), 1e-6);
  }
}

TEST(DmdFit, RegularizationNormBound) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z = random_tensor({6, 4}, rng, -3, 3);
    for (double lambda : {1e-4, 1e-2, 1.0}) {
      const Tensor k = dmd_fit(z, lambda);
      const double bound = spectral_norm(columns(z, 1, 3)) * spectral_norm(columns(z, 0, 3)) / lambda;
      EXPECT_LE(spectral_norm(k), bound * (1 + 1e-12));
    }
  }
}

TEST(DmdFit, FrobeniusNormNonIncreasingInLambda) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z = random_tensor({5, 4}, rng);
    const double n4 = frobenius_norm(dmd_fit(z, 1e-4));
    const double n3 = frobenius_norm(dmd_fit(z, 1e-3));
    const double n2 = frobenius_norm(dmd_fit(z, 1e-2));
    EXPECT_GE(n4, n3);
    EXPECT_GE(n3, n2);
  }
}

TEST(DmdFit, RankDeficientWindowStaysBounded) {
  std::mt19937_64 rng(7);
  const Tensor col = random_tensor({4, 1}, rng);
  Tensor z({4, 5});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) z.at(i, j) = col[i];
  const double lambda = 1e-3;
  const Tensor k = dmd_fit(z, lambda);
  EXPECT_TRUE(k.all_finite());
  const double bound = spectral_norm(columns(z, 1, 4)) * spectral_norm(columns(z, 0, 4)) / lambda;
  EXPECT_LE(spectral_norm(k), bound);
  EXPECT_LE(max_abs_diff(dmd_fit_svd(z, lambda, 1), k), 1e-8);
}

TEST(DmdFit, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const double err = gradient_error(
      [](Tape&, const std::vector<Var>& v) { return kflow::testing::weighted_sum(dmd_fit(v[0], 1e-2)); },
      {random_tensor({3, 5}, rng)});
  EXPECT_LE(err, 1e-6);
}

TEST(Windows, LengthAndPlan) {
  EXPECT_EQ(window_length(4), 4u);
  EXPECT_EQ(window_length(16), 4u);
  EXPECT_EQ(window_length(20), 5u);
  EXPECT_EQ(window_length(64), 16u);

  const auto p = plan_windows(16, 4);
  EXPECT_EQ(p.starts, (std::vector<std::size_t>{0, 4, 8, 12}));
  const auto q = plan_windows(10, 4);
  EXPECT_EQ(q.starts, (std::vector<std::size_t>{0, 4, 6}));
  EXPECT_EQ(q.owner, (std::vector<std::size_t>{0, 0, 0, 0, 1, 1, 1, 1, 2, 2}));
  EXPECT_THROW(plan_windows(3, 4), DimensionError);
}

TEST(VariantPath, ZeroInputGivesZero) {
  Tape t;
  std::mt19937_64 rng(9);
  const Var enc = t.constant(random_tensor({2, 4}, rng)), dec = t.constant(random_tensor({4, 2}, rng));
  for (DmdSolver s : {DmdSolver::Cholesky, DmdSolver::Svd}) {
    const Tensor out = variant_path(t.constant(Tensor({2, 16, 2})), enc, dec, 1e-3, 4, s).value();
    EXPECT_EQ(frobenius_norm(out), 0.0);
  }
  EXPECT_THROW(variant_path(t.constant(Tensor({1, 3, 2})), enc, dec, 1e-3, 4, DmdSolver::Svd), DimensionError);
}

TEST(VariantPath, AdvancesLinearDynamicsOneStep) {
  // Identity encoder/decoder: every step is replaced by its one-step
  // prediction under the window's fitted operator.
  const std::size_t T = 10, D = 2;
  const double c = std::cos(0.3), s = std::sin(0.3);
  const double a[2][2] = {{0.9 * c, -0.9 * s}, {0.9 * s, 0.9 * c}};
  Tensor x({1, T, D});
  x[0] = 1.0;
  x[1] = 0.2;
  for (std::size_t t = 1; t < T; ++t)
    for (std::size_t i = 0; i < D; ++i) x[t * D + i] = a[i][0] * x[(t - 1) * D] + a[i][1] * x[(t - 1) * D + 1];
  Tape tape;
  const Var eye = tape.constant(Tensor::identity(D));
  for (DmdSolver solver : {DmdSolver::Cholesky, DmdSolver::Svd}) {
    const Tensor out = variant_path(tape.constant(x), eye, eye, 1e-10, 4, solver).value();
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < D; ++i) {
        const double want = a[i][0] * x[t * D] + a[i][1] * x[t * D + 1];
        EXPECT_NEAR(out[t * D + i], want, 1e-6 * std::max(1.0, std::abs(want)));
      }
  }
}

TEST(VariantPath, SolversAgreeAndGradientFlows) {
  std::mt19937_64 rng(10);
  const Tensor x = random_tensor({2, 8, 3}, rng);
  const Tensor enc = random_tensor({3, 2}, rng), dec = random_tensor({2, 3}, rng);
  Tape t;
  const Tensor a = variant_path(t.constant(x), t.constant(enc), t.constant(dec), 1e-3, 4, DmdSolver::Cholesky).value();
  const Tensor b = variant_path(t.constant(x), t.constant(enc), t.constant(dec), 1e-3, 4, DmdSolver::Svd).value();
  EXPECT_LE(max_abs_diff(a, b), 1e-8);

  const double err = gradient_error(
      [](Tape&, const std::vector<Var>& v) {
        return kflow::testing::weighted_sum(variant_path(v[0], v[1], v[2], 1e-2, 4, DmdSolver::Cholesky));
      },
      {x, enc, dec});
  EXPECT_LE(err, 1e-5);
}

TEST(SpectralRadius, KnownMatrices) {
  EXPECT_NEAR(spectral_radius(Tensor({2, 2}, {0.5, 0, 0, -2})), 2.0, 1e-6);
  const double c = std::cos(1.0), s = std::sin(1.0);
  EXPECT_NEAR(spectral_radius(Tensor({2, 2}, {0.9 * c, -0.9 * s, 0.9 * s, 0.9 * c})), 0.9, 1e-6);
  EXPECT_EQ(spectral_radius(Tensor({3, 3})), 0.0);
}

}  // namespace
}  // namespace kflow::koopman
