#include "kflow/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kflow/error.hpp"
#include "kflow/kernels.hpp"
#include "kflow/ops.hpp"

namespace kflow::spectral {

std::vector<double> amplitude_spectrum(const Tensor& h) {
  if (h.rank() != 3) throw DimensionError("amplitude_spectrum: expected [B×T×D], got " + to_string(h.shape()));
  const std::size_t B = h.dim(0), T = h.dim(1), D = h.dim(2);
  if (T < 4) throw DimensionError("amplitude_spectrum: T must be >= 4, got " + std::to_string(T));
  const std::size_t bins = T / 2 + 1;
  std::vector<double> ones(bins, 1.0), spec(B * bins * D * 2);
  kernels::parallel::dft_analysis({B, T, D}, ones, h.data(), spec);
  std::vector<double> amp(bins, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < bins; ++k)
      for (std::size_t d = 0; d < D; ++d) {
        const double* c = spec.data() + ((b * bins + k) * D + d) * 2;
        amp[k] += std::hypot(c[0], c[1]);
      }
  for (double& a : amp) a /= static_cast<double>(B * D);
  return amp;
}

std::size_t FrequencyMask::kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)); }

FrequencyMask select_mask(std::span<const double> spectrum, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1], got " + std::to_string(alpha));
  if (spectrum.empty()) throw DimensionError("select_mask: empty spectrum");
  FrequencyMask m;
  m.alpha = alpha;
  m.source_spectrum.assign(spectrum.begin(), spectrum.end());
  m.keep.assign(spectrum.size(), false);
  m.keep[0] = true;

  std::vector<std::size_t> order(spectrum.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return spectrum[a] > spectrum[b]; });
  double total = 0.0;
  for (double a : spectrum) total += a * a;
  if (total <= 0.0) return m;
  double acc = 0.0;
  for (std::size_t k : order) {
    m.keep[k] = true;
    acc += spectrum[k] * spectrum[k];
    if (acc >= alpha * total) break;
  }
  return m;
}

SpectralSplit fourier_filter(const Var& h, const FrequencyMask& mask) {
  const Shape& s = h.shape();
  if (s.size() != 3) throw DimensionError("fourier_filter: expected [B×T×D], got " + to_string(s));
  const std::size_t B = s[0], T = s[1], D = s[2], bins = T / 2 + 1;
  if (mask.bins() != bins) {
    throw DimensionError("fourier_filter: mask has " + std::to_string(mask.bins()) + " bins, T=" +
                         std::to_string(T) + " needs " + std::to_string(bins));
  }
  Tape& tape = h.tape();
  const Var spec = rfft_axis(h, 1);
  Tensor keep({B, bins, D, 2}), drop({B, bins, D, 2});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < bins; ++k)
      for (std::size_t j = 0; j < D * 2; ++j) {
        const std::size_t idx = (b * bins + k) * D * 2 + j;
        (mask.keep[k] ? keep : drop)[idx] = 1.0;
      }
  SpectralSplit out;
  out.x_inv = irfft_axis(mul(spec, tape.constant(std::move(keep))), 1, T);
  out.x_var = irfft_axis(mul(spec, tape.constant(std::move(drop))), 1, T);
  out.mask = mask;
  return out;
}

std::vector<double> update_mask_ema(std::span<const double> running, std::span<const double> batch, double decay) {
  if (running.size() != batch.size()) throw DimensionError("update_mask_ema: spectra differ in length");
  if (!(decay >= 0.0 && decay < 1.0)) throw ContractError("update_mask_ema: decay must lie in [0, 1)");
  std::vector<double> out(running.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = decay * running[i] + (1.0 - decay) * batch[i];
  return out;
}

SpectralTracker::SpectralTracker(std::size_t T, double alpha, double decay)
    : bins_(T / 2 + 1), alpha_(alpha), decay_(decay) {
  if (T < 4) throw ConfigError("spectral tracker: T must be >= 4");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("mask decay must lie in [0, 1)");
}

void SpectralTracker::observe(const Tensor& h) {
  if (frozen_) return;
  auto batch = amplitude_spectrum(h);
  if (batch.size() != bins_) throw DimensionError("spectral tracker: sequence length changed");
  running_ = running_ ? update_mask_ema(*running_, batch, decay_) : std::move(batch);
  mask_ = select_mask(*running_, alpha_);
}

const FrequencyMask& SpectralTracker::mask() const {
  if (!running_) throw ContractError("spectral tracker has not observed any batch yet");
  return mask_;
}

Tensor SpectralTracker::to_tensor() const {
  const auto& m = mask();
  std::vector<double> flat{static_cast<double>(bins_), alpha_};
  for (bool k : m.keep) flat.push_back(k ? 1.0 : 0.0);
  flat.insert(flat.end(), running_->begin(), running_->end());
  const std::size_t n = flat.size();
  return Tensor({n}, std::move(flat));
}

SpectralTracker SpectralTracker::from_tensor(const Tensor& t, std::size_t T, double decay) {
  const std::size_t bins = T / 2 + 1;
  if (t.rank() != 1 || t.size() != 2 + 2 * bins || t[0] != static_cast<double>(bins)) {
    throw FormatError("spectral.mask does not match T=" + std::to_string(T));
  }
  SpectralTracker tr(T, t[1], decay);
  std::vector<double> spectrum(t.data().begin() + 2 + static_cast<std::ptrdiff_t>(bins), t.data().end());
  tr.mask_.alpha = t[1];
  tr.mask_.source_spectrum = spectrum;
  tr.mask_.keep.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) tr.mask_.keep[k] = t[2 + k] != 0.0;
  tr.running_ = std::move(spectrum);
  tr.frozen_ = true;
  return tr;
}

}  // namespace kflow::spectral
