#include "kflow/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "kflow/error.hpp"
#include "kflow/koopman.hpp"
#include "kflow/ops.hpp"

namespace kflow::training {
namespace {

std::size_t row_size(const Tensor& t) { return t.size() / t.dim(0); }

Tensor take_rows(const Tensor& t, std::span<const std::size_t> idx) {
  Shape s = t.shape();
  const std::size_t n = row_size(t);
  s[0] = idx.size();
  Tensor out(s);
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(idx[k] * n), n,
                out.data().begin() + static_cast<std::ptrdiff_t>(k * n));
  return out;
}

Tensor stack_rows(const Tensor& a, const Tensor& b) {
  Shape s = a.shape();
  s[0] += b.dim(0);
  std::vector<double> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor(s, std::move(data));
}

Tensor difference(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

std::vector<double> pick(std::span<const double> v, std::span<const std::size_t> idx) {
  std::vector<double> out;
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(r_ct > 0.0 && r_ct < 1.0)) fail("r_ct must lie in (0, 1)");
  if (!(lambda_dec >= 0.0 && lambda_ct >= 0.0 && lambda_temporal >= 0.0 && lambda_spatial >= 0.0)) {
    fail("loss weights must be >= 0");
  }
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("ema_decay must lie in [0, 1)");
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0)) fail("bad Adam constants");
  if (batch < 2) fail("batch must be >= 2");
  if (!(dt_min > 0.0 && dt_min <= dt_max && dt_max < 1.0)) fail("need 0 < dt_min <= dt_max < 1");
}

void TrainConfig::write(KeyValues& kv) const {
  kv["r_ct"] = format_real(r_ct);
  kv["lambda_dec"] = format_real(lambda_dec);
  kv["lambda_ct"] = format_real(lambda_ct);
  kv["lambda_temporal"] = format_real(lambda_temporal);
  kv["lambda_spatial"] = format_real(lambda_spatial);
  kv["ema_decay"] = format_real(ema_decay);
  kv["lr"] = format_real(lr);
  kv["beta1"] = format_real(beta1);
  kv["beta2"] = format_real(beta2);
  kv["adam_eps"] = format_real(adam_eps);
  kv["batch"] = std::to_string(batch);
  kv["steps"] = std::to_string(steps);
  kv["dt_min"] = format_real(dt_min);
  kv["dt_max"] = format_real(dt_max);
  kv["train_seed"] = std::to_string(seed);
}

TrainConfig TrainConfig::read(ConfigReader& r) {
  TrainConfig c;
  c.r_ct = r.real("r_ct", c.r_ct);
  c.lambda_dec = r.real("lambda_dec", c.lambda_dec);
  c.lambda_ct = r.real("lambda_ct", c.lambda_ct);
  c.lambda_temporal = r.real("lambda_temporal", c.lambda_temporal);
  c.lambda_spatial = r.real("lambda_spatial", c.lambda_spatial);
  c.ema_decay = r.real("ema_decay", c.ema_decay);
  c.lr = r.real("lr", c.lr);
  c.beta1 = r.real("beta1", c.beta1);
  c.beta2 = r.real("beta2", c.beta2);
  c.adam_eps = r.real("adam_eps", c.adam_eps);
  c.batch = r.count("batch", c.batch);
  c.steps = r.count("steps", c.steps);
  c.dt_min = r.real("dt_min", c.dt_min);
  c.dt_max = r.real("dt_max", c.dt_max);
  c.seed = r.seed("train_seed", c.seed);
  c.validate();
  return c;
}

double LossBreakdown::recompose(double lambda_ct, double lambda_dec) const {
  return fm + lambda_ct * ct + lambda_dec * (ct_inv + inv_cross + var_flow) + reg_temp + reg_rate + reg_spatial;
}

std::string LossBreakdown::csv_header() {
  return "fm,ct,ct_inv,inv_cross,var_flow,reg_temp,reg_rate,reg_spatial,total";
}

std::string LossBreakdown::csv_row() const {
  std::ostringstream s;
  s.precision(10);
  s << fm << ',' << ct << ',' << ct_inv << ',' << inv_cross << ',' << var_flow << ',' << reg_temp << ','
    << reg_rate << ',' << reg_spatial << ',' << total;
  return s.str();
}

Tensor ot_interpolate(const Tensor& x0, const Tensor& x1, std::span<const double> t) {
  if (x0.shape() != x1.shape() || x0.rank() == 0 || x0.dim(0) != t.size()) {
    throw DimensionError("ot_interpolate: x0 " + to_string(x0.shape()) + ", x1 " + to_string(x1.shape()) + ", " +
                         std::to_string(t.size()) + " times");
  }
  for (double ti : t)
    if (!(ti >= 0.0 && ti <= 1.0)) throw ContractError("ot_interpolate: t must lie in [0, 1]");
  Tensor out(x0.shape());
  const std::size_t n = row_size(x0);
  for (std::size_t b = 0; b < t.size(); ++b)
    for (std::size_t i = 0; i < n; ++i) out[b * n + i] = t[b] * x1[b * n + i] + (1.0 - t[b]) * x0[b * n + i];
  return out;
}

Var fm_loss(const Var& v_pred, const Tensor& x0, const Tensor& x1) {
  return mse(v_pred, v_pred.tape().constant(difference(x1, x0)));
}

Tensor ct_target(const Tensor& x_t, const Tensor& x_next, const Tensor& v_teacher_next, std::span<const double> t,
                 std::span<const double> dt) {
  if (x_t.shape() != x_next.shape() || x_t.shape() != v_teacher_next.shape() || x_t.dim(0) != t.size() ||
      dt.size() != t.size()) {
    throw DimensionError("ct_target: inconsistent shapes");
  }
  Tensor out(x_t.shape());
  const std::size_t n = row_size(x_t);
  for (std::size_t b = 0; b < t.size(); ++b) {
    if (!(t[b] < 1.0) || !(t[b] + dt[b] <= 1.0 + 1e-12)) throw ContractError("ct_target: need t < 1 and t + dt <= 1");
    const double rest = 1.0 - t[b] - dt[b];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = b * n + i;
      out[k] = (x_next[k] + rest * v_teacher_next[k] - x_t[k]) / (1.0 - t[b]);
    }
  }
  return out;
}

Tensor ct_target(const Tensor& x0, const Tensor& x1, std::span<const double> t, std::span<const double> dt,
                 const VelocityFn& teacher) {
  if (dt.size() != t.size()) throw DimensionError("ct_target: t and dt differ in length");
  std::vector<double> t_next(t.size());
  for (std::size_t b = 0; b < t.size(); ++b) t_next[b] = std::min(1.0, t[b] + dt[b]);
  const Tensor x_t = ot_interpolate(x0, x1, t);
  const Tensor x_next = ot_interpolate(x0, x1, t_next);
  return ct_target(x_t, x_next, teacher(x_next, t_next), t, dt);
}

Var ct_loss(const Var& v_pred, const Tensor& target) { return mse(v_pred, v_pred.tape().constant(target)); }

DecoupledLosses decoupled_losses(const backbone::VelocityFields& student, const TeacherFields& teacher_same,
                                 const TeacherFields& teacher_next) {
  Tape& tape = student.v_inv.tape();
  return {mse(student.v_inv, tape.constant(teacher_same.v_inv)),
          mse(student.v_inv, tape.constant(teacher_next.v_inv)),
          mse(student.v_var, tape.constant(teacher_same.v_var))};
}

RegLosses reg_loss(const Var& v_inv_pred, const Tensor& v_inv_next, double lambda_temporal, double lambda_spatial) {
  const Shape& s = v_inv_pred.shape();
  if (s.size() != 3 || v_inv_next.shape() != s) throw DimensionError("reg_loss: expected matching [B×T×D] fields");
  const std::size_t B = s[0], T = s[1];
  if (T < 2) throw DimensionError("reg_loss: change rate needs T >= 2");
  Tape& tape = v_inv_pred.tape();
  const Var next = tape.constant(v_inv_next);
  const Var gap = sub(v_inv_pred, next);
  RegLosses r;
  r.temp_diff = scale(mean_abs(gap), lambda_temporal);
  const Var rate_gap = sub(slice(gap, 1, 1, T - 1), slice(gap, 1, 0, T - 1));
  r.change_rate = scale(mean_abs(rate_gap), lambda_temporal);
  const Var batch_mean = expand(mean_axis(v_inv_pred, 0), 0, B);
  r.spatial = scale(mean_abs(sub(v_inv_pred, batch_mean)), lambda_spatial);
  return r;
}

Partition partition_batch(std::size_t B, double r_ct, std::mt19937_64& rng) {
  if (!(r_ct > 0.0 && r_ct < 1.0)) throw ConfigError("partition_batch: r_ct must lie in (0, 1)");
  const auto n_ct = static_cast<std::size_t>(std::llround(static_cast<double>(B) * r_ct));
  if (n_ct == 0 || n_ct >= B) {
    throw ConfigError("partition_batch: B=" + std::to_string(B) + " with r_ct=" + std::to_string(r_ct) +
                      " leaves an empty partition");
  }
  std::vector<std::size_t> idx(B);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  Partition p;
  p.ct.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_ct));
  p.fm.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_ct), idx.end());
  std::sort(p.ct.begin(), p.ct.end());
  std::sort(p.fm.begin(), p.fm.end());
  return p;
}

EmaTeacher::EmaTeacher(const ParameterSet& student, double decay) : decay_(decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("ema decay must lie in [0, 1)");
  for (const auto& [name, p] : student) shadow_.add(name, p.value);
}

void EmaTeacher::update(const ParameterSet& student) {
  if (student.size() != shadow_.size()) throw ContractError("ema_update: parameter count changed");
  for (const auto& [name, p] : student) {
    if (!shadow_.contains(name)) throw ContractError("ema_update: unknown parameter '" + name + "'");
    Tensor& s = shadow_.at(name).value;
    if (s.shape() != p.value.shape()) throw ContractError("ema_update: shape of '" + name + "' changed");
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = decay_ * s[i] + (1.0 - decay_) * p.value[i];
  }
}

void Adam::step(ParameterSet& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    if (!p.grad) continue;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(p.value.size(), 0.0);
      v.assign(p.value.size(), 0.0);
    }
    const Tensor& g = *p.grad;
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

StepSample draw_sample(const Batch& batch, const TrainConfig& cfg, std::mt19937_64& rng) {
  const std::size_t B = batch.size();
  StepSample s;
  s.part = partition_batch(B, cfg.r_ct, rng);
  s.x1 = batch.x1;
  s.events = batch.events;
  s.context = batch.context;
  s.x0 = Tensor(batch.x1.shape());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : s.x0.data()) v = normal(rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  s.t.assign(B, 0.0);
  s.dt.assign(B, 0.0);
  std::vector<bool> is_ct(B, false);
  for (std::size_t i : s.part.ct) is_ct[i] = true;
  for (std::size_t b = 0; b < B; ++b) {
    if (is_ct[b]) {
      s.t[b] = unit(rng) * (1.0 - cfg.dt_min);
      const double hi = std::min(cfg.dt_max, 1.0 - s.t[b]);
      s.dt[b] = cfg.dt_min + unit(rng) * (hi - cfg.dt_min);
    } else {
      s.t[b] = unit(rng);
    }
  }
  return s;
}

LossGraph compute_losses(Tape& tape, backbone::Model& model, ParameterSet& teacher, const StepSample& s,
                         const spectral::FrequencyMask& mask, const TrainConfig& cfg) {
  using koopman::DmdSolver;
  const auto& ct = s.part.ct;
  const auto& fm = s.part.fm;
  const Tensor x_t = ot_interpolate(s.x0, s.x1, s.t);

  backbone::Binder student(tape, model.params(), true);
  const backbone::Conditioning cond{s.events, s.context, s.t};
  const auto fields = model.forward(student, tape.constant(x_t), cond, mask, DmdSolver::Cholesky);

  // Teacher at (x_{t+dt}, t+dt) and (x_t, t) on the ct rows, one stacked pass.
  const Tensor x0c = take_rows(s.x0, ct), x1c = take_rows(s.x1, ct);
  const std::vector<double> tc = pick(s.t, ct), dtc = pick(s.dt, ct);
  std::vector<double> tn(tc.size());
  for (std::size_t i = 0; i < tc.size(); ++i) tn[i] = std::min(1.0, tc[i] + dtc[i]);
  const Tensor x_tc = take_rows(x_t, ct);
  const Tensor x_nc = ot_interpolate(x0c, x1c, tn);
  TeacherFields t_next, t_same;
  {
    Tape ttape;
    backbone::Binder frozen(ttape, teacher, false);
    std::vector<double> tt = tn;
    tt.insert(tt.end(), tc.begin(), tc.end());
    const Tensor ev = take_rows(s.events, ct), cx = take_rows(s.context, ct);
    const backbone::Conditioning tcond{stack_rows(ev, ev), stack_rows(cx, cx), tt};
    const auto tf = model.forward(frozen, ttape.constant(stack_rows(x_nc, x_tc)), tcond, mask, DmdSolver::Cholesky);
    std::vector<std::size_t> first(ct.size()), second(ct.size());
    std::iota(first.begin(), first.end(), std::size_t{0});
    std::iota(second.begin(), second.end(), ct.size());
    t_next = {take_rows(tf.v_inv.value(), first), take_rows(tf.v_var.value(), first),
              take_rows(tf.v_total.value(), first)};
    t_same = {take_rows(tf.v_inv.value(), second), take_rows(tf.v_var.value(), second),
              take_rows(tf.v_total.value(), second)};
  }

  const Var l_fm = fm_loss(index_select(fields.v_total, 0, fm), take_rows(s.x0, fm), take_rows(s.x1, fm));
  backbone::VelocityFields sc;
  sc.v_inv = index_select(fields.v_inv, 0, ct);
  sc.v_var = index_select(fields.v_var, 0, ct);
  sc.v_total = index_select(fields.v_total, 0, ct);
  const Var l_ct = ct_loss(sc.v_total, ct_target(x_tc, x_nc, t_next.v_total, tc, dtc));
  const auto dec = decoupled_losses(sc, t_same, t_next);
  const auto reg = reg_loss(sc.v_inv, t_next.v_inv, cfg.lambda_temporal, cfg.lambda_spatial);

  Var total = add(l_fm, scale(l_ct, cfg.lambda_ct));
  total = add(total, scale(add(add(dec.ct_inv, dec.inv_cross), dec.var_flow), cfg.lambda_dec));
  total = add(total, add(add(reg.temp_diff, reg.change_rate), reg.spatial));

  LossGraph g;
  g.total = total;
  g.h_in = fields.h_in;
  auto& p = g.parts;
  p.fm = l_fm.value().item();
  p.ct = l_ct.value().item();
  p.ct_inv = dec.ct_inv.value().item();
  p.inv_cross = dec.inv_cross.value().item();
  p.var_flow = dec.var_flow.value().item();
  p.reg_temp = reg.temp_diff.value().item();
  p.reg_rate = reg.change_rate.value().item();
  p.reg_spatial = reg.spatial.value().item();
  p.total = total.value().item();
  return g;
}

Trainer::Trainer(backbone::Model& model, TrainConfig cfg)
    : model_(model),
      cfg_(cfg),
      teacher_(model.params(), cfg.ema_decay),
      adam_(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps),
      rng_(cfg.seed) {
  cfg_.validate();
}

LossBreakdown Trainer::step(const Batch& batch) {
  const StepSample s = draw_sample(batch, cfg_, rng_);
  auto& tracker = model_.tracker();
  if (!tracker.ready()) {
    Tape seed_tape;
    backbone::Binder frozen(seed_tape, model_.params(), false);
    const backbone::Conditioning cond{s.events, s.context, s.t};
    tracker.observe(model_.trunk(frozen, seed_tape.constant(ot_interpolate(s.x0, s.x1, s.t)), cond).value());
  }
  const spectral::FrequencyMask mask = tracker.mask();

  model_.params().zero_grad();
  Tape tape;
  LossGraph g;
  try {
    g = compute_losses(tape, model_, teacher_.shadow(), s, mask, cfg_);
  } catch (const NumericError& e) {
    throw NumericError("training step " + std::to_string(adam_.steps()) + ": " + e.what());
  }
  if (!std::isfinite(g.parts.total)) {
    throw NumericError("training step " + std::to_string(adam_.steps()) + ": non-finite loss; " +
                       LossBreakdown::csv_header() + " = " + g.parts.csv_row());
  }
  tape.backward(g.total);
  adam_.step(model_.params());
  teacher_.update(model_.params());
  tracker.observe(g.h_in.value());
  return g.parts;
}

void Trainer::fit(const Dataset& data, const std::function<void(std::size_t, const LossBreakdown&)>& on_step) {
  if (data.size() < cfg_.batch) throw ConfigError("training set is smaller than one batch");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  for (std::size_t k = 0; k < cfg_.steps; ++k) {
    if (cursor + cfg_.batch > order.size()) {
      std::shuffle(order.begin(), order.end(), rng_);
      cursor = 0;
    }
    const std::span<const std::size_t> idx(order.data() + cursor, cfg_.batch);
    cursor += cfg_.batch;
    const LossBreakdown l = step(make_batch(data, idx));
    if (on_step) on_step(adam_.steps(), l);
  }
}

TrainLog::TrainLog(std::ostream& out) : out_(out) {
  out_ << "step," << LossBreakdown::csv_header() << ",spectral_radius,kept_bins\n";
}

void TrainLog::row(std::size_t step, const LossBreakdown& l, const backbone::Model& model) {
  const double rho = koopman::spectral_radius(model.params().at("koopman.inv.K").value);
  const std::size_t kept = model.tracker().ready() ? model.tracker().mask().kept() : 0;
  out_ << step << ',' << l.csv_row() << ',' << rho << ',' << kept << '\n';
}

}  // namespace kflow::training
