#include "kflow/fft.hpp"

#include "kflow/error.hpp"
#include "kflow/kernels.hpp"

namespace kflow::fft {

std::size_t bin_count(std::size_t n) { return n / 2 + 1; }

std::vector<std::complex<double>> rfft(std::span<const double> x) {
  if (x.size() < 2) throw DimensionError("rfft needs at least 2 samples");
  const std::size_t bins = bin_count(x.size());
  std::vector<double> ones(bins, 1.0), packed(bins * 2);
  kernels::serial::dft_analysis({1, x.size(), 1}, ones, x, packed);
  std::vector<std::complex<double>> out(bins);
  for (std::size_t b = 0; b < bins; ++b) out[b] = {packed[2 * b], packed[2 * b + 1]};
  return out;
}

std::vector<double> irfft(std::span<const std::complex<double>> spectrum, std::size_t n) {
  if (n < 2) throw DimensionError("irfft needs at least 2 samples");
  const std::size_t bins = bin_count(n);
  if (spectrum.size() != bins) throw DimensionError("irfft: spectrum has the wrong number of bins");
  std::vector<double> w(bins), packed(bins * 2), out(n);
  kernels::irfft_weights(n, w);
  for (std::size_t b = 0; b < bins; ++b) {
    packed[2 * b] = spectrum[b].real();
    packed[2 * b + 1] = spectrum[b].imag();
  }
  kernels::serial::dft_synthesis({1, n, 1}, w, packed, out);
  return out;
}

}  // namespace kflow::fft
