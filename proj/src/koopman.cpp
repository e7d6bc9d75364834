#include "kflow/koopman.hpp"

#include <algorithm>
#include <cmath>

#include "kflow/error.hpp"
#include "kflow/kernels.hpp"
#include "kflow/ops.hpp"

namespace kflow::koopman {
namespace {

void check_window(const Shape& s) {
  if (s.size() != 2 || s[1] < 2) throw DimensionError("dmd_fit: expected Z[d×w] with w >= 2, got " + to_string(s));
}

Var identity_like(Tape& tape, std::size_t d, double lambda) {
  Tensor eye({d, d});
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = lambda;
  return tape.constant(std::move(eye));
}

}  // namespace

Var invariant_path(const Var& x_inv, const Var& enc, const Var& k, const Var& dec) {
  if (enc.shape().size() != 2 || k.shape().size() != 2 || dec.shape().size() != 2 || k.dim(0) != k.dim(1) ||
      enc.dim(1) != k.dim(0) || dec.dim(0) != k.dim(1) || dec.dim(1) != enc.dim(0)) {
    throw DimensionError("invariant_path: operator shapes " + to_string(enc.shape()) + ", " + to_string(k.shape()) +
                         ", " + to_string(dec.shape()) + " do not chain");
  }
  return linear(linear(linear(x_inv, enc), k), dec);
}

Var dmd_fit(const Var& z, double lambda) {
  check_window(z.shape());
  if (!(lambda >= 0.0)) throw ContractError("dmd_fit: lambda must be >= 0");
  const std::size_t d = z.dim(0), w = z.dim(1);
  const Var x = slice(z, 1, 0, w - 1);
  const Var y = slice(z, 1, 1, w - 1);
  const Var a = add(matmul(x, transpose(x)), identity_like(z.tape(), d, lambda));
  // K_locᵀ = (X·Xᵀ + λI)⁻¹·X·Yᵀ
  return transpose(spd_solve(a, matmul(x, transpose(y))));
}

Tensor dmd_fit(const Tensor& z, double lambda) {
  Tape tape;
  return dmd_fit(tape.constant(z), lambda).value();
}

Tensor dmd_fit_svd(const Tensor& z, double lambda, std::size_t rank) {
  check_window(z.shape());
  const std::size_t d = z.dim(0), w = z.dim(1);
  std::vector<double> rows(w * d);  // snapshots as rows
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < w; ++j) rows[j * d + i] = z[i * w + j];
  std::vector<double> kt(d * d);
  kernels::serial::batched_dmd_svd(1, w, d, lambda, rank, rows, kt);
  Tensor k({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) k[i * d + j] = kt[j * d + i];
  return k;
}

std::size_t window_length(std::size_t T) { return std::max<std::size_t>(4, T / 4); }

WindowPlan plan_windows(std::size_t T, std::size_t w) {
  if (w < 2 || T < w) {
    throw DimensionError("plan_windows: window " + std::to_string(w) + " does not fit T=" + std::to_string(T));
  }
  WindowPlan p;
  p.length = w;
  p.owner.assign(T, 0);
  std::size_t start = 0;
  for (; start + w <= T; start += w) {
    for (std::size_t s = start; s < start + w; ++s) p.owner[s] = p.starts.size();
    p.starts.push_back(start);
  }
  if (start < T) {
    for (std::size_t s = start; s < T; ++s) p.owner[s] = p.starts.size();
    p.starts.push_back(T - w);
  }
  return p;
}

Var variant_path(const Var& x_var, const Var& enc, const Var& dec, double lambda, std::size_t window,
                 DmdSolver solver) {
  const Shape& s = x_var.shape();
  if (s.size() != 3) throw DimensionError("variant_path: expected [B×T×D], got " + to_string(s));
  if (enc.shape().size() != 2 || dec.shape().size() != 2 || enc.dim(0) != s[2] || dec.dim(0) != enc.dim(1) ||
      dec.dim(1) != s[2]) {
    throw DimensionError("variant_path: encoder/decoder shapes do not match D=" + std::to_string(s[2]));
  }
  if (!(lambda > 0.0)) throw ContractError("variant_path: lambda must be > 0");
  const std::size_t B = s[0], T = s[1], d = enc.dim(1);
  if (T < window) {
    throw DimensionError("variant_path: T=" + std::to_string(T) + " is shorter than the window " +
                         std::to_string(window));
  }
  const WindowPlan plan = plan_windows(T, window);
  const std::size_t nw = plan.starts.size(), w = plan.length;
  Tape& tape = x_var.tape();

  const Var z = linear(x_var, enc);  // [B×T×d]
  std::vector<std::size_t> gather;
  for (std::size_t st : plan.starts)
    for (std::size_t j = 0; j < w; ++j) gather.push_back(st + j);
  const Var zw = reshape(index_select(z, 1, gather), {B * nw, w, d});  // rows are snapshots

  Var kt;  // [B·nw × d × d], K_locᵀ per window
  if (solver == DmdSolver::Cholesky) {
    const Var xr = slice(zw, 1, 0, w - 1);
    const Var yr = slice(zw, 1, 1, w - 1);
    const Var xrt = transpose_last2(xr);
    Tensor ridge({B * nw, d, d});
    for (std::size_t b = 0; b < B * nw; ++b)
      for (std::size_t i = 0; i < d; ++i) ridge[(b * d + i) * d + i] = lambda;
    const Var a = add(batched_matmul(xrt, xr), tape.constant(std::move(ridge)));
    kt = batched_spd_solve(a, batched_matmul(xrt, yr));
  } else {
    Tensor kv({B * nw, d, d});
    kernels::parallel::batched_dmd_svd(B * nw, w, d, lambda, std::min(d, w - 1), zw.value().data(), kv.data());
    kt = tape.constant(std::move(kv));
  }
  const Var advanced = reshape(batched_matmul(zw, kt), {B, nw * w, d});
  std::vector<std::size_t> pick(T);
  for (std::size_t t = 0; t < T; ++t) pick[t] = plan.owner[t] * w + (t - plan.starts[plan.owner[t]]);
  return linear(index_select(advanced, 1, pick), dec);
}

double spectral_radius(const Tensor& k, int squarings) {
  if (k.rank() != 2 || k.dim(0) != k.dim(1)) throw DimensionError("spectral_radius: expected a square matrix");
  const std::size_t n = k.dim(0);
  double norm = frobenius_norm(k);
  if (norm == 0.0) return 0.0;
  std::vector<double> m(k.data().begin(), k.data().end()), sq(n * n);
  for (double& v : m) v /= norm;
  double log_scale = std::log(norm);  // K^(2^j) = e^{log_scale}·M
  double estimate = norm;
  for (int j = 1; j <= squarings; ++j) {
    kernels::serial::gemm({false, false, n, n, n, false}, m, m, sq);
    double s = 0.0;
    for (double v : sq) s += v * v;
    s = std::sqrt(s);
    if (s == 0.0) return 0.0;
    for (std::size_t i = 0; i < n * n; ++i) m[i] = sq[i] / s;
    log_scale = 2.0 * log_scale + std::log(s);
    estimate = std::exp(log_scale / std::ldexp(1.0, j));
  }
  return estimate;
}

}  // namespace kflow::koopman
