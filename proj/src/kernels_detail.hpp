#pragma once

// Per-item routines shared by the serial and parallel kernel variants.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "kflow/error.hpp"
#include "kflow/kernels.hpp"
#include "kflow/linalg.hpp"

namespace kflow::kernels::detail {

inline void check_gemm(const GemmArgs& g, std::size_t a, std::size_t b, std::size_t c) {
  if (a != g.m * g.k || b != g.k * g.n || c != g.m * g.n) throw DimensionError("gemm: buffer sizes do not match m/n/k");
}

// Row i of C. `row` is scratch of length n.
inline void gemm_row(const GemmArgs& g, const double* a, const double* b, double* c, std::size_t i, double* row) {
  const std::size_t m = g.m, n = g.n, k = g.k;
  for (std::size_t j = 0; j < n; ++j) row[j] = 0.0;
  if (!g.trans_b) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = g.trans_a ? a[p * m + i] : a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      const double* bcol = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += (g.trans_a ? a[p * m + i] : a[i * k + p]) * bcol[p];
      row[j] = s;
    }
  }
  double* crow = c + i * n;
  if (g.accumulate) {
    for (std::size_t j = 0; j < n; ++j) crow[j] += row[j];
  } else {
    for (std::size_t j = 0; j < n; ++j) crow[j] = row[j];
  }
}

struct DftTables {
  std::vector<double> cos, sin;
  explicit DftTables(std::size_t len) : cos(len), sin(len) { twiddles(len, cos, sin); }
};

inline void check_dft(const DftArgs& s, std::size_t weights, std::size_t x, std::size_t spectrum) {
  if (s.len < 2) throw DimensionError("dft: length must be >= 2");
  const std::size_t bins = s.len / 2 + 1;
  if (weights != bins || x != s.outer * s.len * s.inner || spectrum != s.outer * bins * s.inner * 2) {
    throw DimensionError("dft: buffer sizes do not match outer/len/inner");
  }
}

// One (outer, inner) line.
inline void analysis_line(const DftArgs& s, const DftTables& tw, const double* w, const double* x, double* spec,
                          std::size_t o, std::size_t i) {
  const std::size_t len = s.len, inner = s.inner, bins = len / 2 + 1;
  for (std::size_t b = 0; b < bins; ++b) {
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      const double v = x[(o * len + t) * inner + i];
      const std::size_t m = (b * t) % len;
      re += v * tw.cos[m];
      im -= v * tw.sin[m];
    }
    double* out = spec + ((o * bins + b) * inner + i) * 2;
    out[0] = w[b] * re;
    out[1] = w[b] * im;
  }
}

inline void synthesis_line(const DftArgs& s, const DftTables& tw, const double* w, const double* spec, double* x,
                           std::size_t o, std::size_t i) {
  const std::size_t len = s.len, inner = s.inner, bins = len / 2 + 1;
  for (std::size_t t = 0; t < len; ++t) {
    double acc = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
      const double* in = spec + ((o * bins + b) * inner + i) * 2;
      const std::size_t m = (b * t) % len;
      acc += w[b] * (in[0] * tw.cos[m] - in[1] * tw.sin[m]);
    }
    x[(o * len + t) * inner + i] = acc;
  }
}

// A = L·Lᵀ then x = A⁻¹·b with one step of iterative refinement.
inline void spd_item(std::size_t d, std::size_t cols, const double* a, const double* b, double* l, double* x) {
  std::span<double> lf(l, d * d);
  std::copy(a, a + d * d, lf.begin());
  linalg::cholesky_factor(lf, d);
  std::span<double> xs(x, d * cols);
  std::copy(b, b + d * cols, xs.begin());
  linalg::cholesky_solve(lf, d, xs, cols);
  std::vector<double> r(d * cols);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t c = 0; c < cols; ++c) {
      double s = b[i * cols + c];
      for (std::size_t k = 0; k < d; ++k) s -= a[i * d + k] * x[k * cols + c];
      r[i * cols + c] = s;
    }
  linalg::cholesky_solve(lf, d, r, cols);
  for (std::size_t k = 0; k < d * cols; ++k) x[k] += r[k];
}

inline void cholesky_item(std::size_t d, std::size_t cols, const double* l, const double* b, double* x) {
  std::copy(b, b + d * cols, x);
  linalg::cholesky_solve(std::span<const double>(l, d * d), d, std::span<double>(x, d * cols), cols);
}

// K_locᵀ for one window of `len` snapshots (rows) of dimension d:
//   X = UΣVᵀ (rank-truncated), K = Y·V·Σ(Σ²+λ)⁻¹·Uᵀ.
inline void dmd_svd_item(std::size_t len, std::size_t d, double lambda, std::size_t rank, const double* window,
                         double* kt) {
  const std::size_t pairs = len - 1;
  std::vector<double> xm(d * pairs);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < pairs; ++j) xm[i * pairs + j] = window[j * d + i];
  std::vector<double> u(d * rank), sigma(rank), v(pairs * rank);
  linalg::truncated_svd(xm, d, pairs, rank, u, sigma, v);

  // M = Y·V·diag(σ/(σ²+λ)), d×rank; Y[i, j] = window[(j+1)·d + i].
  std::vector<double> mm(d * rank, 0.0);
  for (std::size_t r = 0; r < rank; ++r) {
    const double gain = sigma[r] / (sigma[r] * sigma[r] + lambda);
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < pairs; ++j) s += window[(j + 1) * d + i] * v[j * rank + r];
      mm[i * rank + r] = s * gain;
    }
  }
  // Kᵀ[l, i] = Σ_r U[l, r]·M[i, r]
  for (std::size_t l = 0; l < d; ++l)
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t r = 0; r < rank; ++r) s += u[l * rank + r] * mm[i * rank + r];
      kt[l * d + i] = s;
    }
}

inline void check_dmd(std::size_t count, std::size_t len, std::size_t d, double lambda, std::size_t rank,
                      std::size_t windows, std::size_t kt) {
  if (len < 2) throw DimensionError("dmd: window needs at least 2 snapshots");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ContractError("dmd: lambda must be finite and >= 0");
  if (rank > std::min(d, len - 1)) {
    throw ContractError("dmd: rank " + std::to_string(rank) + " exceeds min(d, window-1) = " +
                        std::to_string(std::min(d, len - 1)));
  }
  if (windows != count * len * d || kt != count * d * d) throw DimensionError("dmd: buffer sizes");
}

}  // namespace kflow::kernels::detail
