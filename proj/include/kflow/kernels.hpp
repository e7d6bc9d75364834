#pragma once

// Hot loops of the compute core. Every kernel exists twice with the same
// signature: `serial` is the straightforward reference and `parallel`
// distributes independent output rows/lines/batch items over OpenMP threads.
// Both variants call the same per-item routine, so results are bit-identical
// (tests assert this).

#include <cstddef>
#include <span>

namespace kflow::kernels {

// Row-major GEMM on raw buffers:
//   C[m×n] (+)= op(A)·op(B), op(A) is m×k, op(B) is k×n.
// trans_a: A is stored k×m. trans_b: B is stored n×k.
struct GemmArgs {
  bool trans_a = false;
  bool trans_b = false;
  std::size_t m = 0, n = 0, k = 0;
  bool accumulate = false;
};

// Real DFT along the middle axis of an [outer × len × inner] array; the
// spectrum is laid out [outer × bins × inner × 2] with bins = len/2 + 1.
//
// analysis:  X[o, b, i] = w[b] · Σ_t x[o, t, i] · e^{−2πi·b·t/len}
// synthesis: x[o, t, i] = Σ_b w[b] · (Re X cos θ − Im X sin θ),  θ = 2π·b·t/len
//
// With w ≡ 1 analysis is the rfft and synthesis its adjoint; with
// irfft_weights synthesis is the inverse rfft and analysis its adjoint.
struct DftArgs {
  std::size_t outer = 0, len = 0, inner = 0;
};

namespace serial {

void gemm(const GemmArgs& g, std::span<const double> a, std::span<const double> b, std::span<double> c);
void batched_gemm(std::size_t batch, const GemmArgs& g, std::span<const double> a, std::span<const double> b,
                  std::span<double> c);
void dft_analysis(const DftArgs& s, std::span<const double> weights, std::span<const double> x,
                  std::span<double> spectrum);
void dft_synthesis(const DftArgs& s, std::span<const double> weights, std::span<const double> spectrum,
                   std::span<double> x);
// Factors every SPD block of a[batch×d×d] (lower Cholesky, into `factors`)
// and solves x = A⁻¹·b for b[batch×d×cols].
void batched_spd_solve(std::size_t batch, std::size_t d, std::size_t cols, std::span<const double> a,
                       std::span<const double> b, std::span<double> factors, std::span<double> x);
void batched_cholesky_solve(std::size_t batch, std::size_t d, std::size_t cols, std::span<const double> factors,
                            std::span<const double> b, std::span<double> x);
// windows: [count × len × d] snapshots, rows are time steps. Writes the
// transposed localized operators kt[count × d × d] = K_locᵀ.
void batched_dmd_svd(std::size_t count, std::size_t len, std::size_t d, double lambda, std::size_t rank,
                     std::span<const double> windows, std::span<double> kt);

}  // namespace serial

namespace parallel {

void gemm(const GemmArgs& g, std::span<const double> a, std::span<const double> b, std::span<double> c);
void batched_gemm(std::size_t batch, const GemmArgs& g, std::span<const double> a, std::span<const double> b,
                  std::span<double> c);
void dft_analysis(const DftArgs& s, std::span<const double> weights, std::span<const double> x,
                  std::span<double> spectrum);
void dft_synthesis(const DftArgs& s, std::span<const double> weights, std::span<const double> spectrum,
                   std::span<double> x);
void batched_spd_solve(std::size_t batch, std::size_t d, std::size_t cols, std::span<const double> a,
                       std::span<const double> b, std::span<double> factors, std::span<double> x);
void batched_cholesky_solve(std::size_t batch, std::size_t d, std::size_t cols, std::span<const double> factors,
                            std::span<const double> b, std::span<double> x);
void batched_dmd_svd(std::size_t count, std::size_t len, std::size_t d, double lambda, std::size_t rank,
                     std::span<const double> windows, std::span<double> kt);

}  // namespace parallel

// cos/sin of 2π·m/len for m in [0, len), exact at multiples of len/4.
void twiddles(std::size_t len, std::span<double> cos_table, std::span<double> sin_table);

// Per-bin weights that make dft_synthesis the inverse rfft of length len.
void irfft_weights(std::size_t len, std::span<double> weights);

}  // namespace kflow::kernels
