#include <exception>

#include "kernels_detail.hpp"

namespace kflow::kernels::parallel {
namespace {

// Below this many multiply-adds a region is not worth forking.
constexpr std::size_t kMinParallelWork = std::size_t{1} << 15;

// Runs body(i) for i in [0, n); rethrows the first exception after the region.
template <class Body>
void for_each_item(std::size_t n, std::size_t work, Body&& body) {
  std::exception_ptr error;
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (work >= kMinParallelWork && n > 1)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(kflow_kernel_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

void gemm(const GemmArgs& g, std::span<const double> a, std::span<const double> b, std::span<double> c) {
  detail::check_gemm(g, a.size(), b.size(), c.size());
  const auto m = static_cast<std::ptrdiff_t>(g.m);
  const bool fork = g.m * g.n * g.k >= kMinParallelWork && g.m > 1;
#pragma omp parallel if (fork)
  {
    std::vector<double> row(g.n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < m; ++i)
      detail::gemm_row(g, a.data(), b.data(), c.data(), static_cast<std::size_t>(i), row.data());
  }
}

void batched_gemm(std::size_t batch, const GemmArgs& g, std::span<const double> a, std::span<const double> b,
                  std::span<double> c) {
  const std::size_t sa = g.m * g.k, sb = g.k * g.n, sc = g.m * g.n;
  if (a.size() != batch * sa || b.size() != batch * sb || c.size() != batch * sc) {
    throw DimensionError("batched_gemm: buffer sizes");
  }
  const auto nb = static_cast<std::ptrdiff_t>(batch);
  const bool fork = batch * g.m * g.n * g.k >= kMinParallelWork && batch > 1;
#pragma omp parallel if (fork)
  {
    std::vector<double> row(g.n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t bi = 0; bi < nb; ++bi) {
      const auto u = static_cast<std::size_t>(bi);
      for (std::size_t i = 0; i < g.m; ++i)
        detail::gemm_row(g, a.data() + u * sa, b.data() + u * sb, c.data() + u * sc, i, row.data());
    }
  }
}

void dft_analysis(const DftArgs& s, std::span<const double> weights, std::span<const double> x,
                  std::span<double> spectrum) {
  detail::check_dft(s, weights.size(), x.size(), spectrum.size());
  const detail::DftTables tw(s.len);
  const std::size_t lines = s.outer * s.inner;
  for_each_item(lines, lines * s.len * s.len, [&](std::size_t line) {
    detail::analysis_line(s, tw, weights.data(), x.data(), spectrum.data(), line / s.inner, line % s.inner);
  });
}

void dft_synthesis(const DftArgs& s, std::span<const double> weights, std::span<const double> spectrum,
                   std::span<double> x) {
  detail::check_dft(s, weights.size(), x.size(), spectrum.size());
  const detail::DftTables tw(s.len);
  const std::size_t lines = s.outer * s.inner;
  for_each_item(lines, lines * s.len * s.len, [&](std::size_t line) {
    detail::synthesis_line(s, tw, weights.data(), spectrum.data(), x.data(), line / s.inner, line % s.inner);
  });
}

void batched_spd_solve(std::size_t batch, std::size_t d, std::size_t cols, std::span<const double> a,
                       std::span<const double> b, std::span<double> factors, std::span<double> x) {
  if (a.size() != batch * d * d || factors.size() != a.size() || b.size() != batch * d * cols ||
      x.size() != b.size()) {
    throw DimensionError("batched_spd_solve: buffer sizes");
  }
  for_each_item(batch, batch * d * d * (d + cols), [&](std::size_t i) {
    detail::spd_item(d, cols, a.data() + i * d * d, b.data() + i * d * cols, factors.data() + i * d * d,
                     x.data() + i * d * cols);
  });
}

void batched_cholesky_solve(std::size_t batch, std::size_t d, std::size_t cols, std::span<const double> factors,
                            std::span<const double> b, std::span<double> x) {
  if (factors.size() != batch * d * d || b.size() != batch * d * cols || x.size() != b.size()) {
    throw DimensionError("batched_cholesky_solve: buffer sizes");
  }
  for_each_item(batch, batch * d * d * cols, [&](std::size_t i) {
    detail::cholesky_item(d, cols, factors.data() + i * d * d, b.data() + i * d * cols, x.data() + i * d * cols);
  });
}

void batched_dmd_svd(std::size_t count, std::size_t len, std::size_t d, double lambda, std::size_t rank,
                     std::span<const double> windows, std::span<double> kt) {
  detail::check_dmd(count, len, d, lambda, rank, windows.size(), kt.size());
  for_each_item(count, count * d * d * (rank + 1), [&](std::size_t w) {
    detail::dmd_svd_item(len, d, lambda, rank, windows.data() + w * len * d, kt.data() + w * d * d);
  });
}

}  // namespace kflow::kernels::parallel
