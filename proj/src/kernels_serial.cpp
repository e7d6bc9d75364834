#include <algorithm>
#include <numbers>

#include "kernels_detail.hpp"

namespace kflow::kernels {

void twiddles(std::size_t len, std::span<double> cos_table, std::span<double> sin_table) {
  static constexpr double kQuarterCos[4] = {1.0, 0.0, -1.0, 0.0};
  static constexpr double kQuarterSin[4] = {0.0, 1.0, 0.0, -1.0};
  for (std::size_t m = 0; m < len; ++m) {
    if ((4 * m) % len == 0) {
      const std::size_t q = (4 * m) / len;
      cos_table[m] = kQuarterCos[q];
      sin_table[m] = kQuarterSin[q];
    } else {
      const double theta = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(len);
      cos_table[m] = std::cos(theta);
      sin_table[m] = std::sin(theta);
    }
  }
}

void irfft_weights(std::size_t len, std::span<double> weights) {
  const std::size_t bins = len / 2 + 1;
  for (std::size_t b = 0; b < bins; ++b) {
    const bool single = b == 0 || (len % 2 == 0 && b == len / 2);
    weights[b] = (single ? 1.0 : 2.0) / static_cast<double>(len);
  }
}

namespace serial {

void gemm(const GemmArgs& g, std::span<const double> a, std::span<const double> b, std::span<double> c) {
  detail::check_gemm(g, a.size(), b.size(), c.size());
  std::vector<double> row(g.n);
  for (std::size_t i = 0; i < g.m; ++i) detail::gemm_row(g, a.data(), b.data(), c.data(), i, row.data());
}

void batched_gemm(std::size_t batch, const GemmArgs& g, std::span<const double> a, std::span<const double> b,
                  std::span<double> c) {
  const std::size_t sa = g.m * g.k, sb = g.k * g.n, sc = g.m * g.n;
  if (a.size() != batch * sa || b.size() != batch * sb || c.size() != batch * sc) {
    throw DimensionError("batched_gemm: buffer sizes");
  }
  std::vector<double> row(g.n);
  for (std::size_t bi = 0; bi < batch; ++bi)
    for (std::size_t i = 0; i < g.m; ++i)
      detail::gemm_row(g, a.data() + bi * sa, b.data() + bi * sb, c.data() + bi * sc, i, row.data());
}

void dft_analysis(const DftArgs& s, std::span<const double> weights, std::span<const double> x,
                  std::span<double> spectrum) {
  detail::check_dft(s, weights.size(), x.size(), spectrum.size());
  const detail::DftTables tw(s.len);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i)
      detail::analysis_line(s, tw, weights.data(), x.data(), spectrum.data(), o, i);
}

void dft_synthesis(const DftArgs& s, std::span<const double> weights, std::span<const double> spectrum,
                   std::span<double> x) {
  detail::check_dft(s, weights.size(), x.size(), spectrum.size());
  const detail::DftTables tw(s.len);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i)
      detail::synthesis_line(s, tw, weights.data(), spectrum.data(), x.data(), o, i);
}

void batched_spd_solve(std::size_t batch, std::size_t d, std::size_t cols, std::span<const double> a,
                       std::span<const double> b, std::span<double> factors, std::span<double> x) {
  if (a.size() != batch * d * d || factors.size() != a.size() || b.size() != batch * d * cols ||
      x.size() != b.size()) {
    throw DimensionError("batched_spd_solve: buffer sizes");
  }
  for (std::size_t i = 0; i < batch; ++i)
    detail::spd_item(d, cols, a.data() + i * d * d, b.data() + i * d * cols, factors.data() + i * d * d,
                     x.data() + i * d * cols);
}

void batched_cholesky_solve(std::size_t batch, std::size_t d, std::size_t cols, std::span<const double> factors,
                            std::span<const double> b, std::span<double> x) {
  if (factors.size() != batch * d * d || b.size() != batch * d * cols || x.size() != b.size()) {
    throw DimensionError("batched_cholesky_solve: buffer sizes");
  }
  for (std::size_t i = 0; i < batch; ++i)
    detail::cholesky_item(d, cols, factors.data() + i * d * d, b.data() + i * d * cols, x.data() + i * d * cols);
}

void batched_dmd_svd(std::size_t count, std::size_t len, std::size_t d, double lambda, std::size_t rank,
                     std::span<const double> windows, std::span<double> kt) {
  detail::check_dmd(count, len, d, lambda, rank, windows.size(), kt.size());
  for (std::size_t w = 0; w < count; ++w)
    detail::dmd_svd_item(len, d, lambda, rank, windows.data() + w * len * d, kt.data() + w * d * d);
}

}  // namespace serial
}  // namespace kflow::kernels
