#pragma once

// Fourier filter: splits a latent trajectory [B×T×D] along T into a
// time-invariant part (kept rFFT bins) and a time-variant part (the rest).

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "kflow/tape.hpp"

namespace kflow::spectral {

// Per-bin amplitude |rfft along T| averaged over batch and channels.
// Throws DimensionError unless h is rank 3 with T >= 4.
std::vector<double> amplitude_spectrum(const Tensor& h);

struct FrequencyMask {
  std::vector<bool> keep;  // T/2 + 1 entries, keep[0] is always true
  double alpha = 1.0;
  std::vector<double> source_spectrum;

  std::size_t bins() const { return keep.size(); }
  std::size_t kept() const;
};

// Sorts bins by amplitude (descending, ties to the lower bin) and keeps the
// shortest prefix whose share of Σ amplitude² reaches alpha. DC is always
// kept. Throws ConfigError unless 0 < alpha <= 1.
FrequencyMask select_mask(std::span<const double> spectrum, double alpha);

struct SpectralSplit {
  Var x_inv;
  Var x_var;
  FrequencyMask mask;
};

SpectralSplit fourier_filter(const Var& h, const FrequencyMask& mask);

// running ← decay·running + (1 − decay)·batch
std::vector<double> update_mask_ema(std::span<const double> running, std::span<const double> batch, double decay);

// Online mask: an EMA of batch amplitude spectra (seeded by the first
// batch) and the mask selected from it. Freezing stops further updates.
class SpectralTracker {
 public:
  SpectralTracker(std::size_t T, double alpha, double decay);

  void observe(const Tensor& h);
  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }
  bool ready() const { return running_.has_value(); }

  // Throws ContractError before the first observation.
  const FrequencyMask& mask() const;

  double alpha() const { return alpha_; }
  double decay() const { return decay_; }

  // Flat form [bins, alpha, keep..., spectrum...] for checkpoints.
  Tensor to_tensor() const;
  static SpectralTracker from_tensor(const Tensor& t, std::size_t T, double decay);

 private:
  std::size_t bins_;
  double alpha_;
  double decay_;
  bool frozen_ = false;
  std::optional<std::vector<double>> running_;
  FrequencyMask mask_;
};

}  // namespace kflow::spectral
