#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kflow/checkpoint.hpp"
#include "kflow/config.hpp"
#include "kflow/koopman.hpp"
#include "kflow/spectral.hpp"
#include "kflow/tape.hpp"

namespace kflow::backbone {

struct BackboneConfig {
  std::size_t T = 16;
  std::size_t D = 2;
  std::size_t context_dim = 8;
  std::size_t hidden = 32;
  std::size_t blocks = 2;
  std::size_t heads = 2;
  std::size_t fourier_dim = 16;  // time embedding width (sin and cos halves)
  std::size_t d = 16;            // Koopman dynamic dimension
  std::size_t mlp_ratio = 2;
  double alpha = 0.97;
  double dmd_lambda = 1e-3;
  double time_freq_std = 1.0;
  double mask_decay = 0.99;
  std::uint64_t seed = 0;

  // Throws ConfigError on inconsistent values.
  void validate() const;
  void write(KeyValues& kv) const;
  static BackboneConfig read(ConfigReader& r);
};

// Per-element conditioning: event markers [B×T], context [B×C], t ∈ [0, 1].
struct Conditioning {
  Tensor events;
  Tensor context;
  std::vector<double> t;

  std::size_t batch() const { return t.size(); }
};

struct VelocityFields {
  Var v_inv;
  Var v_var;
  Var v_total;
  Var h_in;
};

// Puts parameters on a tape once each, either as gradient-carrying leaves or
// as constants (for frozen teacher passes).
class Binder {
 public:
  Binder(Tape& tape, ParameterSet& params, bool trainable) : tape_(tape), params_(params), trainable_(trainable) {}
  Var operator()(const std::string& name);
  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  ParameterSet& params_;
  bool trainable_;
  std::map<std::string, Var, std::less<>> bound_;
};

// [sin(2π·f·t), cos(2π·f·t)] over all f, one row per t: [B × 2F].
Tensor gaussian_fourier_embed(std::span<const double> t, std::span<const double> freqs);

// layer_norm(x)·(1 + scale) + shift with x[B×T×H] and scale/shift[B×H].
Var adaln_modulate(const Var& x, const Var& shift, const Var& scale);

struct AttentionWeights {
  Var q, k, v, o;  // [H×H], bias-free
  Var temperature; // one element
};

struct AttentionResult {
  Var out;      // [B×T×H] after the output projection, no residual
  Var logits;   // [B·heads × T × S]
  Var weights;  // softmax of logits
};

// Cross-attention from tokens[B×T×H] to context[B×S×H]; queries and keys
// are L2-normalized per head so every logit lies in [−s, s].
AttentionResult qknorm_cross_attention(const Var& tokens, const Var& context, const AttentionWeights& w,
                                       std::size_t heads, double eps = 1e-6);

// Adds b[n] to every row of x[...×n].
Var add_bias(const Var& x, const Var& b);

class Model {
 public:
  explicit Model(BackboneConfig cfg);

  const BackboneConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const Tensor& time_freqs() const { return time_freqs_; }
  spectral::SpectralTracker& tracker() { return tracker_; }
  const spectral::SpectralTracker& tracker() const { return tracker_; }

  // Blocks up to the hidden representation h_in[B×T×H].
  Var trunk(Binder& p, const Var& x_t, const Conditioning& cond) const;
  // Fourier filter, invariant/variant Koopman paths and output projections.
  VelocityFields head(Binder& p, const Var& h_in, const spectral::FrequencyMask& mask,
                      koopman::DmdSolver solver) const;
  VelocityFields forward(Binder& p, const Var& x_t, const Conditioning& cond, const spectral::FrequencyMask& mask,
                         koopman::DmdSolver solver) const;

  // Plain evaluation with the tracker's mask and the SVD DMD path. Before
  // the tracker has seen data the mask comes from this batch and is discarded.
  VelocityFields evaluate(Tape& tape, const Tensor& x_t, const Conditioning& cond);

  Checkpoint to_checkpoint() const;
  static Model from_checkpoint(const Checkpoint& ckpt);

 private:
  void check_inputs(const Var& x_t, const Conditioning& cond) const;

  BackboneConfig cfg_;
  ParameterSet params_;
  Tensor time_freqs_;
  spectral::SpectralTracker tracker_;
};

}  // namespace kflow::backbone
