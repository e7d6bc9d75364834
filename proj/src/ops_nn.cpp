#include <algorithm>
#include <cmath>

#include "kflow/kernels.hpp"
#include "kflow/linalg.hpp"
#include "kflow/ops.hpp"
#include "ops_util.hpp"

namespace kflow {
namespace {

std::size_t last_dim(std::string_view op, const Var& x) {
  const Shape& s = x.shape();
  if (s.empty() || s.back() == 0) throw DimensionError(std::string(op) + ": needs a non-empty last axis");
  return s.back();
}

void check_symmetric(std::string_view op, std::span<const double> a, std::size_t batch, std::size_t d) {
  constexpr double kTol = 1e-8;
  for (std::size_t b = 0; b < batch; ++b) {
    const double asym = linalg::asymmetry(a.subspan(b * d * d, d * d), d);
    if (asym > kTol) {
      throw ContractError(std::string(op) + ": matrix is not symmetric (relative asymmetry " +
                          std::to_string(asym) + ")");
    }
  }
}

// Shared body of spd_solve and batched_spd_solve.
Var spd_solve_impl(std::string_view op, const Var& a, const Var& b, std::size_t batch, std::size_t d,
                   std::size_t cols, Shape out_shape) {
  Tape& tape = detail::common_tape(op, a, b);
  check_symmetric(op, a.value().data(), batch, d);
  std::vector<double> factors(batch * d * d);
  Tensor x(std::move(out_shape));
  kernels::parallel::batched_spd_solve(batch, d, cols, a.value().data(), b.value().data(), factors, x.data());
  require_finite(x, std::string(op));
  const std::size_t ia = a.id(), ib = b.id();
  const Var inputs[] = {a, b};
  Tensor xs = x;
  return tape.record(op, std::move(x), inputs,
                     [ia, ib, batch, d, cols, factors = std::move(factors), xs = std::move(xs)](Tape& t,
                                                                                              const Tensor& g) {
                       auto ga = t.grad_buffer(ia);
                       auto gb = t.grad_buffer(ib);
                       if (ga.empty() && gb.empty()) return;
                       // G_B = A⁻¹·G (A symmetric), G_A = −G_B·Xᵀ
                       std::vector<double> gbv(batch * d * cols);
                       kernels::parallel::batched_cholesky_solve(batch, d, cols, factors, g.data(), gbv);
                       if (!gb.empty()) detail::add_into(gb, gbv);
                       if (!ga.empty()) {
                         for (std::size_t k = 0; k < batch; ++k) {
                           const double* gk = gbv.data() + k * d * cols;
                           const double* xk = xs.data().data() + k * d * cols;
                           double* out = ga.data() + k * d * d;
                           for (std::size_t i = 0; i < d; ++i)
                             for (std::size_t j = 0; j < d; ++j) {
                               double s = 0.0;
                               for (std::size_t c = 0; c < cols; ++c) s += gk[i * cols + c] * xk[j * cols + c];
                               out[i * d + j] -= s;
                             }
                         }
                       }
                     });
}

}  // namespace

Var layer_norm(const Var& x, double eps) {
  const std::size_t n = last_dim("layer_norm", x);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.size() / n;
  Tensor y(xv.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += xr[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) y[r * n + i] = (xr[i] - mu) * inv_std[r];
  }
  const std::size_t ix = x.id();
  const Var inputs[] = {x};
  Tensor ys = y;
  return x.tape().record("layer_norm", std::move(y), inputs,
                         [ix, n, rows, inv_std = std::move(inv_std), ys = std::move(ys)](Tape& t, const Tensor& g) {
                           auto gx = t.grad_buffer(ix);
                           // dx = (g − mean g − y·mean(g·y)) / σ
                           for (std::size_t r = 0; r < rows; ++r) {
                             double mg = 0.0, mgy = 0.0;
                             for (std::size_t i = 0; i < n; ++i) {
                               mg += g[r * n + i];
                               mgy += g[r * n + i] * ys[r * n + i];
                             }
                             mg /= static_cast<double>(n);
                             mgy /= static_cast<double>(n);
                             for (std::size_t i = 0; i < n; ++i)
                               gx[r * n + i] += inv_std[r] * (g[r * n + i] - mg - ys[r * n + i] * mgy);
                           }
                         });
}

Var softmax_lastdim(const Var& x) {
  const std::size_t n = last_dim("softmax_lastdim", x);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.size() / n;
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = xv[r * n];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, xv[r * n + i]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += (y[r * n + i] = std::exp(xv[r * n + i] - mx));
    for (std::size_t i = 0; i < n; ++i) y[r * n + i] /= z;
  }
  const std::size_t ix = x.id();
  const Var inputs[] = {x};
  Tensor ys = y;
  return x.tape().record("softmax_lastdim", std::move(y), inputs,
                         [ix, n, rows, ys = std::move(ys)](Tape& t, const Tensor& g) {
                           auto gx = t.grad_buffer(ix);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double dot = 0.0;
                             for (std::size_t i = 0; i < n; ++i) dot += g[r * n + i] * ys[r * n + i];
                             for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += ys[r * n + i] * (g[r * n + i] - dot);
                           }
                         });
}

Var l2_normalize_lastdim(const Var& x, double eps) {
  const std::size_t n = last_dim("l2_normalize_lastdim", x);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.size() / n;
  Tensor y(xv.shape());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += xv[r * n + i] * xv[r * n + i];
    norms[r] = std::sqrt(s);
    const double denom = std::max(norms[r], eps);
    for (std::size_t i = 0; i < n; ++i) y[r * n + i] = xv[r * n + i] / denom;
  }
  const std::size_t ix = x.id();
  const Var inputs[] = {x};
  return x.tape().record("l2_normalize_lastdim", std::move(y), inputs,
                         [ix, n, rows, eps, norms = std::move(norms)](Tape& t, const Tensor& g) {
                           auto gx = t.grad_buffer(ix);
                           const Tensor& xs = t.value(ix);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double nr = norms[r];
                             if (nr <= eps) {
                               for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += g[r * n + i] / eps;
                               continue;
                             }
                             double gdx = 0.0;
                             for (std::size_t i = 0; i < n; ++i) gdx += g[r * n + i] * xs[r * n + i];
                             const double c = gdx / (nr * nr * nr);
                             for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += g[r * n + i] / nr - xs[r * n + i] * c;
                           }
                         });
}

Var rfft_axis(const Var& x, std::size_t axis) {
  const auto sp = detail::split_axis(x.shape(), axis, "rfft_axis");
  if (sp.len < 2) throw DimensionError("rfft_axis: length must be >= 2, got " + std::to_string(sp.len));
  const std::size_t bins = sp.len / 2 + 1;
  Shape out_shape = x.shape();
  out_shape[axis] = bins;
  out_shape.push_back(2);
  Tensor out(out_shape);
  const kernels::DftArgs args{sp.outer, sp.len, sp.inner};
  const std::vector<double> ones(bins, 1.0);
  kernels::parallel::dft_analysis(args, ones, x.value().data(), out.data());
  const std::size_t ix = x.id();
  const Var inputs[] = {x};
  return x.tape().record("rfft_axis", std::move(out), inputs, [ix, args, ones](Tape& t, const Tensor& g) {
    auto gx = t.grad_buffer(ix);
    std::vector<double> tmp(gx.size());
    kernels::parallel::dft_synthesis(args, ones, g.data(), tmp);
    detail::add_into(gx, tmp);
  });
}

Var irfft_axis(const Var& spectrum, std::size_t axis, std::size_t n) {
  const Shape& s = spectrum.shape();
  if (s.size() < 2 || s.back() != 2 || axis + 1 >= s.size()) {
    throw DimensionError("irfft_axis: expected [... × bins × ... × 2], got " + to_string(s));
  }
  if (n < 2 || s[axis] != n / 2 + 1) {
    throw DimensionError("irfft_axis: " + std::to_string(s[axis]) + " bins do not match length " + std::to_string(n));
  }
  Shape core(s.begin(), s.end() - 1);
  const auto sp = detail::split_axis(core, axis, "irfft_axis");
  Shape out_shape = core;
  out_shape[axis] = n;
  Tensor out(out_shape);
  const kernels::DftArgs args{sp.outer, n, sp.inner};
  std::vector<double> w(n / 2 + 1);
  kernels::irfft_weights(n, w);
  kernels::parallel::dft_synthesis(args, w, spectrum.value().data(), out.data());
  const std::size_t is = spectrum.id();
  const Var inputs[] = {spectrum};
  return spectrum.tape().record("irfft_axis", std::move(out), inputs, [is, args, w](Tape& t, const Tensor& g) {
    auto gs = t.grad_buffer(is);
    std::vector<double> tmp(gs.size());
    kernels::parallel::dft_analysis(args, w, g.data(), tmp);
    detail::add_into(gs, tmp);
  });
}

Var spd_solve(const Var& a, const Var& b) {
  detail::require_rank("spd_solve", a, 2);
  detail::require_rank("spd_solve", b, 2);
  const std::size_t d = a.dim(0);
  if (a.dim(1) != d || b.dim(0) != d) {
    throw DimensionError("spd_solve: incompatible " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  return spd_solve_impl("spd_solve", a, b, 1, d, b.dim(1), b.shape());
}

Var batched_spd_solve(const Var& a, const Var& b) {
  detail::require_rank("batched_spd_solve", a, 3);
  detail::require_rank("batched_spd_solve", b, 3);
  const std::size_t nb = a.dim(0), d = a.dim(1);
  if (a.dim(2) != d || b.dim(0) != nb || b.dim(1) != d) {
    throw DimensionError("batched_spd_solve: incompatible " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  return spd_solve_impl("batched_spd_solve", a, b, nb, d, b.dim(2), b.shape());
}

}  // namespace kflow
