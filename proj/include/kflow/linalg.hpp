#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kflow/tensor.hpp"

namespace kflow::linalg {

// In-place lower Cholesky factor of a symmetric positive definite d×d
// row-major matrix (upper triangle is zeroed). Throws NumericError if a
// pivot is not strictly positive.
void cholesky_factor(std::span<double> a, std::size_t d);

// Solves L·Lᵀ·X = B in place for B of shape d×cols.
void cholesky_solve(std::span<const double> l, std::size_t d, std::span<double> b, std::size_t cols);

// Max |A_ij − A_ji| relative to max(1, max|A|).
double asymmetry(std::span<const double> a, std::size_t d);

struct Svd {
  Tensor u;                   // rows × rank, orthonormal columns
  std::vector<double> sigma;  // rank, descending, non-negative
  Tensor v;                   // cols × rank, orthonormal columns
};

// Truncated SVD via one-sided Jacobi rotations (Hestenes). Exact up to
// rounding for the leading `rank` triplets. Throws ContractError if rank >
// min(rows, cols) and NumericError if the sweeps do not converge.
Svd truncated_svd(const Tensor& x, std::size_t rank);

// Raw-buffer form used by the batched kernels: x is rows×cols row-major.
// u must hold rows×rank, v cols×rank, sigma rank values.
void truncated_svd(std::span<const double> x, std::size_t rows, std::size_t cols, std::size_t rank,
                   std::span<double> u, std::span<double> sigma, std::span<double> v);

inline constexpr int kMaxJacobiSweeps = 64;

}  // namespace kflow::linalg
