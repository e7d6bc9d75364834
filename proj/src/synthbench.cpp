#include "kflow/synthbench.hpp"

#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <random>

#include "kflow/error.hpp"
#include "kflow/ops.hpp"

namespace kflow::synthbench {

void GenSpec::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("gen spec: " + m); };
  if (T < 4 || D < 1) fail("need T >= 4 and D >= 1");
  if (slow_freqs.empty()) fail("need at least one slow frequency");
  for (double f : slow_freqs)
    if (!(f > 0.0 && f <= static_cast<double>(T) / 8.0)) fail("slow frequencies must lie in (0, T/8]");
  if (!(amp_min >= 0.0 && amp_min <= amp_max)) fail("need 0 <= amp_min <= amp_max");
  if (!(transient_amp >= 0.0) || !(transient_decay >= 0.0)) fail("transient parameters must be >= 0");
  if (transient_support < 1 || transient_support > 3) fail("transient support must be 1..3 steps");
  if (!(event_rate >= 0.0 && event_rate <= 1.0)) fail("event_rate must lie in [0, 1]");
  if (!(noise_std >= 0.0)) fail("noise_std must be >= 0");
}

void GenSpec::write(KeyValues& kv) const {
  kv["T"] = std::to_string(T);
  kv["D"] = std::to_string(D);
  kv["slow_freqs"] = format_reals(slow_freqs);
  kv["amp_min"] = format_real(amp_min);
  kv["amp_max"] = format_real(amp_max);
  kv["transient_amp"] = format_real(transient_amp);
  kv["transient_decay"] = format_real(transient_decay);
  kv["transient_support"] = std::to_string(transient_support);
  kv["event_rate"] = format_real(event_rate);
  kv["noise_std"] = format_real(noise_std);
  kv["gen_seed"] = std::to_string(seed);
}

GenSpec GenSpec::read(ConfigReader& r) {
  GenSpec s;
  s.T = r.count("T", s.T);
  s.D = r.count("D", s.D);
  s.slow_freqs = r.reals("slow_freqs", s.slow_freqs);
  s.amp_min = r.real("amp_min", s.amp_min);
  s.amp_max = r.real("amp_max", s.amp_max);
  s.transient_amp = r.real("transient_amp", s.transient_amp);
  s.transient_decay = r.real("transient_decay", s.transient_decay);
  s.transient_support = r.count("transient_support", s.transient_support);
  s.event_rate = r.real("event_rate", s.event_rate);
  s.noise_std = r.real("noise_std", s.noise_std);
  s.seed = r.seed("gen_seed", s.seed);
  s.validate();
  return s;
}

Components generate_components(const GenSpec& spec, std::size_t index) {
  spec.validate();
  const std::size_t T = spec.T, D = spec.D, M = spec.n_slow_modes();
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> amp(spec.amp_min, spec.amp_max), phase(0.0, 2.0 * std::numbers::pi),
      unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  Components c{Tensor({T, D}), Tensor({T, D}), Tensor({T, D}), {}};
  auto& tr = c.trajectory;
  tr.context.reserve(spec.context_dim());
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t m = 0; m < M; ++m) {
      const double a = amp(rng), phi = phase(rng);
      tr.context.push_back(a * std::cos(phi));
      tr.context.push_back(a * std::sin(phi));
      for (std::size_t s = 0; s < T; ++s) {
        const double arg = 2.0 * std::numbers::pi * spec.slow_freqs[m] * static_cast<double>(s) / static_cast<double>(T);
        c.slow[s * D + d] += a * std::cos(arg + phi);
      }
    }

  tr.events.assign(T, 0);
  std::size_t n_events = 0;
  for (std::size_t s = 0; s < T; ++s) {
    const bool fire = unit(rng) < spec.event_rate;
    if (fire && n_events < spec.max_events()) {
      tr.events[s] = 1;
      ++n_events;
    }
  }
  // Kicks act on the last action dimension.
  for (std::size_t s = 0; s < T; ++s) {
    if (!tr.events[s]) continue;
    double gain = spec.transient_amp;
    for (std::size_t k = 0; k < spec.transient_support && s + k < T; ++k) {
      c.transient[(s + k) * D + (D - 1)] += (k % 2 == 0 ? gain : -gain);
      gain *= spec.transient_decay;
    }
  }
  for (double& v : c.noise.data()) v = spec.noise_std * normal(rng);

  tr.actions = Tensor({T, D});
  for (std::size_t i = 0; i < T * D; ++i) tr.actions[i] = c.slow[i] + c.transient[i] + c.noise[i];
  return c;
}

Dataset generate_dataset(const GenSpec& spec, std::size_t n, std::size_t first_index) {
  spec.validate();
  Dataset data;
  data.T = spec.T;
  data.D = spec.D;
  data.C = spec.context_dim();
  data.items.resize(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n > 64)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const auto k = static_cast<std::size_t>(i);
    data.items[k] = generate_components(spec, first_index + k).trajectory;
  }
  return data;
}

std::vector<double> dilate_events(std::span<const std::uint8_t> events, std::size_t support) {
  std::vector<double> out(events.size(), 0.0);
  for (std::size_t s = 0; s < events.size(); ++s)
    if (events[s])
      for (std::size_t k = 0; k < support && s + k < events.size(); ++k) out[s + k] = 1.0;
  return out;
}

std::vector<double> energy_differences(std::span<const double> energy) {
  std::vector<double> out;
  for (std::size_t s = 1; s < energy.size(); ++s) out.push_back(std::abs(energy[s] - energy[s - 1]));
  return out;
}

double event_correlation(std::span<const double> series, std::span<const double> events) {
  if (series.size() != events.size()) throw DimensionError("event_correlation: series lengths differ");
  const std::size_t n = series.size();
  if (n < 2) throw NumericError("event_correlation: need at least 2 samples");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += series[i];
    my += events[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = series[i] - mx, dy = events[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("event_correlation: undefined for a constant series");
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> naive_rfft_baseline(const Tensor& actions, const spectral::FrequencyMask& mask) {
  if (actions.rank() != 2) throw DimensionError("naive_rfft_baseline: expected actions [T×D]");
  const std::size_t T = actions.dim(0), D = actions.dim(1);
  Tape tape;
  const auto split = spectral::fourier_filter(tape.constant(actions.reshaped({1, T, D})), mask);
  const Tensor& xv = split.x_var.value();
  std::vector<double> e(T, 0.0);
  for (std::size_t s = 0; s < T; ++s)
    for (std::size_t d = 0; d < D; ++d) e[s] += xv[s * D + d] * xv[s * D + d];
  return e;
}

CorrelationReport correlation_analysis(backbone::Model& model, const Dataset& heldout, std::size_t support,
                                       std::size_t noise_draws, std::uint64_t seed) {
  if (noise_draws == 0) throw ConfigError("correlation_analysis: need at least one noise draw");
  const auto& cfg = model.config();
  const Batch batch = make_batch(heldout);
  const std::size_t B = batch.size(), T = cfg.T, D = cfg.D;
  std::vector<double> energy(B * T, 0.0);
  for (std::size_t k = 0; k < noise_draws; ++k) {
    const Tensor x0 = inference::gaussian_noise({B, T, D}, seed + k);
    Tape tape;
    const auto f = model.evaluate(tape, x0, {batch.events, batch.context, std::vector<double>(B, 0.0)});
    const Tensor& vv = f.v_var.value();
    for (std::size_t i = 0; i < B * T; ++i)
      for (std::size_t d = 0; d < D; ++d) energy[i] += vv[i * D + d] * vv[i * D + d] / static_cast<double>(noise_draws);
  }
  const auto& mask = model.tracker().mask();
  CorrelationReport r;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& tr = heldout.items[b];
    const auto m = energy_differences(std::span<const double>(energy.data() + b * T, T));
    const auto nv = energy_differences(naive_rfft_baseline(tr.actions, mask));
    const auto ev = dilate_events(tr.events, support);
    r.model_series.insert(r.model_series.end(), m.begin(), m.end());
    r.naive_series.insert(r.naive_series.end(), nv.begin(), nv.end());
    r.events.insert(r.events.end(), ev.begin() + 1, ev.end());
  }
  r.model_r = event_correlation(r.model_series, r.events);
  r.naive_r = event_correlation(r.naive_series, r.events);
  return r;
}

namespace {

AblationRow evaluate_row(backbone::Model& model, const std::string& axis, double value, std::size_t nfe,
                         const AblationInputs& in, const Dataset& heldout) {
  const Batch hb = make_batch(heldout);
  AblationRow row{axis, value, 0, 0, 0, {}};
  row.trajectory_mse = inference::trajectory_mse(model, hb, nfe, in.eval_seed);
  // A constant variant energy (for instance when the mask keeps every bin)
  // has no defined correlation; the other metrics still stand.
  try {
    row.event_corr = correlation_analysis(model, heldout, in.transient_support, in.noise_draws, in.eval_seed).model_r;
  } catch (const NumericError&) {
    row.event_corr = std::numeric_limits<double>::quiet_NaN();
  }
  row.inv_stability = inference::inv_sensitivity(model, hb, in.eval_seed);
  return row;
}

}  // namespace

std::vector<AblationRow> ablation_sweep(const std::string& axis, const std::vector<double>& values,
                                        const AblationInputs& in, const Dataset& train, const Dataset& heldout,
                                        const std::function<void(const AblationRow&)>& on_row) {
  if (values.empty()) throw ConfigError("ablation_sweep: no values");
  if (axis != "lambda_dec" && axis != "r_ct" && axis != "alpha" && axis != "nfe") {
    throw ConfigError("ablation_sweep: unknown axis '" + axis + "' (lambda_dec, r_ct, alpha, nfe)");
  }
  std::vector<AblationRow> rows;
  auto record = [&](AblationRow row) {
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  };
  auto failed = [&](double v, const std::exception& e) { record({axis, v, 0, 0, 0, e.what()}); };

  if (axis == "nfe") {
    backbone::Model model(in.model);
    try {
      training::Trainer(model, in.train).fit(train);
    } catch (const std::exception& e) {
      for (double v : values) failed(v, e);
      return rows;
    }
    model.tracker().freeze();
    for (double v : values) {
      try {
        if (!(v >= 1.0) || v != std::floor(v)) throw ConfigError("nfe values must be positive integers");
        record(evaluate_row(model, axis, v, static_cast<std::size_t>(v), in, heldout));
      } catch (const std::exception& e) {
        failed(v, e);
      }
    }
    return rows;
  }

  for (double v : values) {
    try {
      backbone::BackboneConfig mc = in.model;
      training::TrainConfig tc = in.train;
      if (axis == "lambda_dec") tc.lambda_dec = v;
      if (axis == "r_ct") tc.r_ct = v;
      if (axis == "alpha") mc.alpha = v;
      backbone::Model model(mc);
      training::Trainer(model, tc).fit(train);
      model.tracker().freeze();
      record(evaluate_row(model, axis, v, in.nfe, in, heldout));
    } catch (const std::exception& e) {
      failed(v, e);
    }
  }
  return rows;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "axis,value,trajectory_mse,event_corr,inv_stability,error\n";
  out.precision(10);
  for (const auto& r : rows) {
    std::string err = r.error;
    for (char& ch : err)
      if (ch == ',' || ch == '\n') ch = ';';
    out << r.axis << ',' << r.value << ',' << r.trajectory_mse << ',' << r.event_corr << ',' << r.inv_stability
        << ',' << err << '\n';
  }
}

ReplayEnvironment::ReplayEnvironment(std::vector<std::uint8_t> events, std::vector<double> context, std::size_t T)
    : events_(std::move(events)), context_(std::move(context)), T_(T) {}

inference::Observation ReplayEnvironment::observe() {
  inference::Observation o{Tensor({T_}), context_};
  for (std::size_t k = 0; k < T_ && cursor_ + k < events_.size(); ++k) o.events[k] = events_[cursor_ + k];
  return o;
}

bool ReplayEnvironment::step(std::span<const double> action) {
  if (cursor_ >= events_.size()) return false;
  applied_.emplace_back(action.begin(), action.end());
  ++cursor_;
  return cursor_ < events_.size();
}

}  // namespace kflow::synthbench
