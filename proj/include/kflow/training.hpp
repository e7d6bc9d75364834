#pragma once

// Fused co-training: flow matching on one batch partition; consistency
// distillation, spectral decoupling terms and L1 kinematic regularizers on
// the other; EMA teacher.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kflow/backbone.hpp"
#include "kflow/config.hpp"
#include "kflow/dataset.hpp"
#include "kflow/tape.hpp"

namespace kflow::training {

struct TrainConfig {
  double r_ct = 0.2;
  double lambda_dec = 0.5;
  // Weight of the consistency loss; 0 together with lambda_dec = 0 and zero
  // regularizer weights leaves a plain flow-matching trainer.
  double lambda_ct = 1.0;
  double lambda_temporal = 0.1;
  double lambda_spatial = 0.1;
  double ema_decay = 0.99;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch = 32;
  std::size_t steps = 2000;
  double dt_min = 0.01;
  double dt_max = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
  void write(KeyValues& kv) const;
  static TrainConfig read(ConfigReader& r);
};

struct LossBreakdown {
  double fm = 0, ct = 0, ct_inv = 0, inv_cross = 0, var_flow = 0;
  double reg_temp = 0, reg_rate = 0, reg_spatial = 0;
  double total = 0;

  // fm + λ_ct·ct + λ_dec·(ct_inv + inv_cross + var_flow) + regularizers
  double recompose(double lambda_ct, double lambda_dec) const;
  static std::string csv_header();
  std::string csv_row() const;
};

// x_t = t·x1 + (1 − t)·x0 with one t per batch element (leading axis).
// Throws ContractError if some t lies outside [0, 1].
Tensor ot_interpolate(const Tensor& x0, const Tensor& x1, std::span<const double> t);

// mean((v_pred − (x1 − x0))²)
Var fm_loss(const Var& v_pred, const Tensor& x0, const Tensor& x1);

using VelocityFn = std::function<Tensor(const Tensor& x, std::span<const double> t)>;

// (x_{t+dt} + (1 − t − dt)·v_teacher(x_{t+dt}, t + dt) − x_t)/(1 − t), with
// both points on the straight path between the same x0 and x1.
Tensor ct_target(const Tensor& x0, const Tensor& x1, std::span<const double> t, std::span<const double> dt,
                 const VelocityFn& teacher);
// Same target from already computed points and teacher velocity.
Tensor ct_target(const Tensor& x_t, const Tensor& x_next, const Tensor& v_teacher_next, std::span<const double> t,
                 std::span<const double> dt);

Var ct_loss(const Var& v_pred, const Tensor& target);

// Teacher outputs are plain values (no gradient).
struct TeacherFields {
  Tensor v_inv, v_var, v_total;
};

struct DecoupledLosses {
  Var ct_inv, inv_cross, var_flow;
};
DecoupledLosses decoupled_losses(const backbone::VelocityFields& student, const TeacherFields& teacher_same,
                                 const TeacherFields& teacher_next);

struct RegLosses {
  Var temp_diff, change_rate, spatial;
};
// L1 regularizers on v_inv[B×T×D] against the teacher's next-step v_inv.
// Throws DimensionError for T < 2.
RegLosses reg_loss(const Var& v_inv_pred, const Tensor& v_inv_next, double lambda_temporal, double lambda_spatial);

struct Partition {
  std::vector<std::size_t> ct, fm;
};
// |ct| = round(B·r_ct) drawn uniformly without replacement; the rest is fm.
// Throws ConfigError if that leaves either side empty.
Partition partition_batch(std::size_t B, double r_ct, std::mt19937_64& rng);

class EmaTeacher {
 public:
  EmaTeacher(const ParameterSet& student, double decay);
  // shadow ← decay·shadow + (1 − decay)·student. Throws ContractError if
  // the student's parameter names or shapes changed.
  void update(const ParameterSet& student);
  ParameterSet& shadow() { return shadow_; }
  const ParameterSet& shadow() const { return shadow_; }
  double decay() const { return decay_; }

 private:
  ParameterSet shadow_;
  double decay_;
};

// Adam with per-parameter moment buffers.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ParameterSet& params);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>, std::less<>> m_, v_;
};

// Everything random about one training step, drawn up front.
struct StepSample {
  Tensor x0, x1, events, context;
  std::vector<double> t, dt;  // dt is only meaningful on the ct partition
  Partition part;
};

StepSample draw_sample(const Batch& batch, const TrainConfig& cfg, std::mt19937_64& rng);

struct LossGraph {
  Var total;
  Var h_in;
  LossBreakdown parts;
};

// Builds the full objective on `tape` for the student (trainable leaves) with
// teacher passes evaluated as constants on a private tape.
LossGraph compute_losses(Tape& tape, backbone::Model& model, ParameterSet& teacher, const StepSample& s,
                         const spectral::FrequencyMask& mask, const TrainConfig& cfg);

class Trainer {
 public:
  Trainer(backbone::Model& model, TrainConfig cfg);

  // One optimizer step on `batch`. Throws NumericError (with the breakdown
  // in the message) on a non-finite loss.
  LossBreakdown step(const Batch& batch);

  // Runs cfg.steps steps on random batches, calling `on_step` after each.
  void fit(const Dataset& data, const std::function<void(std::size_t, const LossBreakdown&)>& on_step = {});

  const TrainConfig& config() const { return cfg_; }
  EmaTeacher& teacher() { return teacher_; }
  std::size_t steps_done() const { return adam_.steps(); }

 private:
  backbone::Model& model_;
  TrainConfig cfg_;
  EmaTeacher teacher_;
  Adam adam_;
  std::mt19937_64 rng_;
};

// CSV log: header then one row per step with all loss fields, the spectral
// radius of K̃_inv and the kept-bin count.
class TrainLog {
 public:
  explicit TrainLog(std::ostream& out);
  void row(std::size_t step, const LossBreakdown& l, const backbone::Model& model);

 private:
  std::ostream& out_;
};

}  // namespace kflow::training
