#pragma once

// Euler sampling, receding-horizon execution and held-out evaluation
// metrics for trained models.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "kflow/backbone.hpp"
#include "kflow/dataset.hpp"

namespace kflow::inference {

struct SamplerConfig {
  std::size_t nfe = 1;
  std::uint64_t seed = 0;
};

// Velocity of a batch x[B×T×D] at time t (same t for the whole batch).
using Field = std::function<Tensor(const Tensor& x, double t)>;

// x ← x + field(x, k/nfe)/nfe for k = 0..nfe−1. Throws ContractError for nfe = 0.
Tensor euler_integrate(const Tensor& x0, std::size_t nfe, const Field& field);

Tensor gaussian_noise(Shape shape, std::uint64_t seed);

// Integrates the model's v_total from x0 ~ N(0, I) (drawn from cfg.seed) to
// t = 1 with the frozen mask and the SVD DMD path. events[B×T],
// context[B×C] → [B×T×D].
Tensor euler_sample(backbone::Model& model, const Tensor& events, const Tensor& context, const SamplerConfig& cfg);

// Field of the model for fixed conditioning.
Field model_field(backbone::Model& model, const Tensor& events, const Tensor& context);

struct MagnitudeReport {
  std::vector<double> v_var;    // per step τ, ‖v_var[τ]‖ averaged over the batch
  std::vector<double> v_total;  // same for v_total
  double mean_var = 0;
  double mean_total = 0;
};
MagnitudeReport variant_magnitude_report(backbone::Model& model, const Tensor& x_t, const Tensor& events,
                                         const Tensor& context, double t);

struct RhcConfig {
  std::size_t horizon = 4;  // H
  std::size_t execute = 3;  // m
  void validate() const;    // ConfigError unless 1 <= m <= H
};

struct Observation {
  Tensor events;                // [T] upcoming markers from the current step
  std::vector<double> context;  // [C]
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual Observation observe() = 0;
  // Applies one action; returns false once the episode has terminated.
  virtual bool step(std::span<const double> action) = 0;
};

// Returns a full [T×D] plan for an observation.
using Policy = std::function<Tensor(const Observation&)>;

struct RhcResult {
  Tensor executed;  // [steps × D]
  std::vector<double> plan_ms;
  std::size_t planning_calls() const { return plan_ms.size(); }
};

// Replans every m steps, executing the first m of the first H planned steps,
// until episode_len steps ran or the environment terminated.
RhcResult rhc_execute(Environment& env, const Policy& policy, const RhcConfig& cfg, std::size_t episode_len);

// A policy that samples the model with a fresh seed per call.
Policy model_policy(backbone::Model& model, SamplerConfig cfg);

// Held-out metrics. All draw their noise from `seed`.
double trajectory_mse(backbone::Model& model, const Batch& data, std::size_t nfe, std::uint64_t seed);
double flow_matching_loss(backbone::Model& model, const Batch& data, std::uint64_t seed);
// Mean over trajectories of ‖v_inv(x_t, t) − v_inv(x_t', t')‖ for two
// independent uniform times on the same straight path.
double inv_sensitivity(backbone::Model& model, const Batch& data, std::uint64_t seed);

}  // namespace kflow::inference
