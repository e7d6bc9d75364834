#pragma once

#include <complex>
#include <span>
#include <vector>

namespace kflow::fft {

// Naive O(T²) real DFT: bin k = Σₙ x[n]·e^(−2πi·kn/T), T/2 + 1 bins.
// Throws DimensionError for T < 2.
std::vector<std::complex<double>> rfft(std::span<const double> x);

// Inverse of rfft for a length-n signal; imaginary parts of the DC and
// Nyquist bins are ignored.
std::vector<double> irfft(std::span<const std::complex<double>> spectrum, std::size_t n);

std::size_t bin_count(std::size_t n);

}  // namespace kflow::fft
