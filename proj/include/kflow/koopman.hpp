#pragma once

// Invariant path: a learned global Koopman matrix between a bias-free
// encoder and decoder. Variant path: per-window localized DMD operators
// fitted to the encoded trajectory itself.
//
// Operators act on row vectors in the invariant path (z_{τ+1} ≈ z_τ·K̃).
// Localized operators are fitted in the column convention
// K_loc = Y·Xᵀ·(X·Xᵀ + λI)⁻¹ so that K_loc·z_τ ≈ z_{τ+1}; in row form that
// is z_τ·K_locᵀ.

#include <cstddef>
#include <vector>

#include "kflow/tape.hpp"

namespace kflow::koopman {

// h = dec(enc(x)·K) applied per step. x[...×D], enc[D×d], k[d×d], dec[d×D].
Var invariant_path(const Var& x_inv, const Var& enc, const Var& k, const Var& dec);

// Z is d×w (columns are snapshots). Cholesky path; λ >= 0 (λ = 0 requires
// X·Xᵀ to be positive definite).
Tensor dmd_fit(const Tensor& z, double lambda);
// Differentiable form of dmd_fit.
Var dmd_fit(const Var& z, double lambda);
// Truncated-SVD path, not differentiable. Throws ContractError if rank >
// min(d, w − 1).
Tensor dmd_fit_svd(const Tensor& z, double lambda, std::size_t rank);

// τ_w = max(4, ⌊T/4⌋)
std::size_t window_length(std::size_t T);

// Non-overlapping windows of length w with stride w; when w does not divide
// T the last window is right-aligned and the steps it shares with the
// previous window stay with the previous one.
struct WindowPlan {
  std::size_t length = 0;
  std::vector<std::size_t> starts;
  std::vector<std::size_t> owner;  // window index per step
};
WindowPlan plan_windows(std::size_t T, std::size_t w);

enum class DmdSolver {
  Cholesky,  // differentiable (training)
  Svd,       // truncated SVD at full rank, no gradient (inference)
};

// x_var[B×T×D] → [B×T×D]: encode, fit K_loc per window and batch element,
// advance each step by its window's operator, decode.
Var variant_path(const Var& x_var, const Var& enc, const Var& dec, double lambda, std::size_t window,
                 DmdSolver solver);

// ρ(K) estimated as ‖K^(2^j)‖_F^(1/2^j) with per-squaring normalization.
double spectral_radius(const Tensor& k, int squarings = 30);

}  // namespace kflow::koopman
