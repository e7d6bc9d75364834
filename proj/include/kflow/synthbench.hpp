#pragma once

// Synthetic event-conditioned trajectories (slow sinusoids plus decaying
// alternating kicks after sparse events) and the analysis metrics run on
// trained models.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "kflow/backbone.hpp"
#include "kflow/config.hpp"
#include "kflow/dataset.hpp"
#include "kflow/inference.hpp"
#include "kflow/spectral.hpp"
#include "kflow/training.hpp"

namespace kflow::synthbench {

struct GenSpec {
  std::size_t T = 16;
  std::size_t D = 2;
  std::vector<double> slow_freqs{1.0, 2.0};  // whole cycles per trajectory
  double amp_min = 0.5;
  double amp_max = 1.5;
  double transient_amp = 1.0;
  double transient_decay = 0.5;
  std::size_t transient_support = 3;
  double event_rate = 0.1;
  double noise_std = 0.01;
  std::uint64_t seed = 0;

  std::size_t n_slow_modes() const { return slow_freqs.size(); }
  // [a·cos φ, a·sin φ] for every (dim, mode)
  std::size_t context_dim() const { return 2 * D * n_slow_modes(); }
  std::size_t max_events() const { return (T + 3) / 4; }

  void validate() const;
  void write(KeyValues& kv) const;
  static GenSpec read(ConfigReader& r);
};

struct Components {
  Tensor slow, transient, noise;  // each [T×D]
  Trajectory trajectory;          // actions = slow + transient + noise
};

// Trajectory `index` of the dataset seeded by spec.seed; every trajectory
// has its own RNG stream.
Components generate_components(const GenSpec& spec, std::size_t index);
Dataset generate_dataset(const GenSpec& spec, std::size_t n, std::size_t first_index = 0);

// dilated[s] = 1 if an event happened in [s − support + 1, s].
std::vector<double> dilate_events(std::span<const std::uint8_t> events, std::size_t support);

// |e_τ − e_{τ−1}| for τ >= 1.
std::vector<double> energy_differences(std::span<const double> energy);

// Pearson correlation. Throws NumericError if either series is constant
// and DimensionError on a length mismatch.
double event_correlation(std::span<const double> series, std::span<const double> events);

// Per-step ‖x_var‖² of the raw actions[T×D] filtered with `mask`.
std::vector<double> naive_rfft_baseline(const Tensor& actions, const spectral::FrequencyMask& mask);

struct CorrelationReport {
  double model_r = 0;
  double naive_r = 0;
  std::vector<double> model_series, naive_series, events;  // pooled over trajectories
};

// Model energy is ‖v_var[τ]‖² of the one-step sampling pass (t = 0),
// averaged over `noise_draws` noise samples. Both series are turned into
// frame-to-frame differences and correlated with events dilated by the
// transient support.
CorrelationReport correlation_analysis(backbone::Model& model, const Dataset& heldout, std::size_t support,
                                       std::size_t noise_draws, std::uint64_t seed);

struct AblationRow {
  std::string axis;
  double value = 0;
  double trajectory_mse = 0;
  double event_corr = 0;  // NaN when the model energy series is constant
  double inv_stability = 0;
  std::string error;  // empty on success
};

struct AblationInputs {
  backbone::BackboneConfig model;
  training::TrainConfig train;
  std::size_t nfe = 1;
  std::size_t transient_support = 3;
  std::size_t noise_draws = 8;
  std::uint64_t eval_seed = 1234;
};

// One training run per value (or one run plus one sampling pass per value
// for the nfe axis). Failures are recorded in the row and the sweep goes on.
std::vector<AblationRow> ablation_sweep(const std::string& axis, const std::vector<double>& values,
                                        const AblationInputs& in, const Dataset& train, const Dataset& heldout,
                                        const std::function<void(const AblationRow&)>& on_row = {});

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);

// Plays back the event markers of a recorded episode; observation is the
// next T markers (zero past the end) plus the context.
class ReplayEnvironment : public inference::Environment {
 public:
  ReplayEnvironment(std::vector<std::uint8_t> events, std::vector<double> context, std::size_t T);
  inference::Observation observe() override;
  bool step(std::span<const double> action) override;
  const std::vector<std::vector<double>>& applied() const { return applied_; }

 private:
  std::vector<std::uint8_t> events_;
  std::vector<double> context_;
  std::size_t T_;
  std::size_t cursor_ = 0;
  std::vector<std::vector<double>> applied_;
};

}  // namespace kflow::synthbench
