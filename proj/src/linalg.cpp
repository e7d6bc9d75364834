#include "kflow/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "kflow/error.hpp"

namespace kflow::linalg {

void cholesky_factor(std::span<double> a, std::size_t d) {
  if (a.size() != d * d) throw DimensionError("cholesky_factor: buffer is not d×d");
  for (std::size_t j = 0; j < d; ++j) {
    double diag = a[j * d + j];
    for (std::size_t k = 0; k < j; ++k) diag -= a[j * d + k] * a[j * d + k];
    if (!(diag > 0.0) || !std::isfinite(diag)) {
      throw NumericError("cholesky_factor: matrix is not positive definite (pivot " + std::to_string(j) + ")");
    }
    const double ljj = std::sqrt(diag);
    a[j * d + j] = ljj;
    for (std::size_t i = j + 1; i < d; ++i) {
      double s = a[i * d + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * d + k] * a[j * d + k];
      a[i * d + j] = s / ljj;
    }
    for (std::size_t k = j + 1; k < d; ++k) a[j * d + k] = 0.0;
  }
}

void cholesky_solve(std::span<const double> l, std::size_t d, std::span<double> b, std::size_t cols) {
  if (l.size() != d * d || b.size() != d * cols) throw DimensionError("cholesky_solve: buffer sizes");
  // L·y = b
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      const double lik = l[i * d + k];
      for (std::size_t c = 0; c < cols; ++c) b[i * cols + c] -= lik * b[k * cols + c];
    }
    const double inv = 1.0 / l[i * d + i];
    for (std::size_t c = 0; c < cols; ++c) b[i * cols + c] *= inv;
  }
  // Lᵀ·x = y
  for (std::size_t i = d; i-- > 0;) {
    for (std::size_t k = i + 1; k < d; ++k) {
      const double lki = l[k * d + i];
      for (std::size_t c = 0; c < cols; ++c) b[i * cols + c] -= lki * b[k * cols + c];
    }
    const double inv = 1.0 / l[i * d + i];
    for (std::size_t c = 0; c < cols; ++c) b[i * cols + c] *= inv;
  }
}

double asymmetry(std::span<const double> a, std::size_t d) {
  double scale = 1.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  double worst = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) worst = std::max(worst, std::abs(a[i * d + j] - a[j * d + i]));
  return worst / scale;
}

namespace {

// One-sided Jacobi on a tall (rows >= cols) matrix held column-major in `w`.
// On return the columns of `w` are mutually orthogonal and `v` (cols×cols,
// column-major) accumulates the rotations.
void jacobi_orthogonalize(std::vector<double>& w, std::size_t rows, std::size_t cols, std::vector<double>& v) {
  v.assign(cols * cols, 0.0);
  for (std::size_t i = 0; i < cols; ++i) v[i * cols + i] = 1.0;
  constexpr double tol = 1e-15;

  for (int sweep = 0; sweep < kMaxJacobiSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < cols; ++p) {
      for (std::size_t q = p + 1; q < cols; ++q) {
        double* wp = &w[p * rows];
        double* wq = &w[q * rows];
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          alpha += wp[i] * wp[i];
          beta += wq[i] * wq[i];
          gamma += wp[i] * wq[i];
        }
        if (alpha == 0.0 || beta == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double a = wp[i], b = wq[i];
          wp[i] = c * a - s * b;
          wq[i] = s * a + c * b;
        }
        double* vp = &v[p * cols];
        double* vq = &v[q * cols];
        for (std::size_t i = 0; i < cols; ++i) {
          const double a = vp[i], b = vq[i];
          vp[i] = c * a - s * b;
          vq[i] = s * a + c * b;
        }
      }
    }
    if (!rotated) return;
  }
  throw NumericError("truncated_svd: Jacobi sweeps did not converge");
}

}  // namespace

void truncated_svd(std::span<const double> x, std::size_t rows, std::size_t cols, std::size_t rank,
                   std::span<double> u, std::span<double> sigma, std::span<double> v) {
  if (x.size() != rows * cols) throw DimensionError("truncated_svd: buffer is not rows×cols");
  if (rank > std::min(rows, cols)) {
    throw ContractError("truncated_svd: rank " + std::to_string(rank) + " exceeds min(" + std::to_string(rows) +
                        ", " + std::to_string(cols) + ")");
  }
  if (u.size() != rows * rank || v.size() != cols * rank || sigma.size() != rank) {
    throw DimensionError("truncated_svd: output buffer sizes");
  }
  for (double e : x)
    if (!std::isfinite(e)) throw NumericError("truncated_svd: non-finite input");

  // Orthogonalize the columns of the tall orientation.
  const bool transposed = rows < cols;
  const std::size_t m = transposed ? cols : rows;
  const std::size_t n = transposed ? rows : cols;
  std::vector<double> w(m * n);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      if (transposed)
        w[r * m + c] = x[r * cols + c];  // column r of xᵀ
      else
        w[c * m + r] = x[r * cols + c];
    }
  std::vector<double> rot;
  jacobi_orthogonalize(w, m, n, rot);

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += w[j * m + i] * w[j * m + i];
    norms[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

  // Left vectors of the tall orientation live in w (length m), right in rot (length n).
  std::span<double> left = transposed ? v : u;
  std::span<double> right = transposed ? u : v;
  for (std::size_t r = 0; r < rank; ++r) {
    const std::size_t j = order[r];
    sigma[r] = norms[j];
    const double inv = norms[j] > 0.0 ? 1.0 / norms[j] : 0.0;
    for (std::size_t i = 0; i < m; ++i) left[i * rank + r] = w[j * m + i] * inv;
    for (std::size_t i = 0; i < n; ++i) right[i * rank + r] = rot[j * n + i];
  }
}

Svd truncated_svd(const Tensor& x, std::size_t rank) {
  if (x.rank() != 2) throw DimensionError("truncated_svd needs a matrix, got " + to_string(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (rank > std::min(rows, cols)) {
    throw ContractError("truncated_svd: rank " + std::to_string(rank) + " exceeds min(" + std::to_string(rows) +
                        ", " + std::to_string(cols) + ")");
  }
  Svd out{Tensor({rows, rank}), std::vector<double>(rank), Tensor({cols, rank})};
  truncated_svd(x.data(), rows, cols, rank, out.u.data(), out.sigma, out.v.data());
  return out;
}

}  // namespace kflow::linalg
