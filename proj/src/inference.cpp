#include "kflow/inference.hpp"

#include <chrono>
#include <cmath>
#include <memory>
#include <random>

#include "kflow/error.hpp"
#include "kflow/training.hpp"

namespace kflow::inference {
namespace {

backbone::Conditioning make_cond(const Tensor& events, const Tensor& context, double t) {
  return {events, context, std::vector<double>(events.dim(0), t)};
}

double mean_sq_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace

Tensor euler_integrate(const Tensor& x0, std::size_t nfe, const Field& field) {
  if (nfe == 0) throw ContractError("euler_integrate: nfe must be >= 1");
  Tensor x = x0;
  const double h = 1.0 / static_cast<double>(nfe);
  for (std::size_t k = 0; k < nfe; ++k) {
    const Tensor v = field(x, static_cast<double>(k) * h);
    if (v.shape() != x.shape()) throw DimensionError("euler_integrate: field changed the shape");
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += h * v[i];
  }
  return x;
}

Tensor gaussian_noise(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = n(rng);
  return t;
}

Field model_field(backbone::Model& model, const Tensor& events, const Tensor& context) {
  return [&model, events, context](const Tensor& x, double t) {
    Tape tape;
    return model.evaluate(tape, x, make_cond(events, context, t)).v_total.value();
  };
}

Tensor euler_sample(backbone::Model& model, const Tensor& events, const Tensor& context, const SamplerConfig& cfg) {
  const auto& c = model.config();
  if (events.rank() != 2) throw DimensionError("euler_sample: events must be [B×T]");
  const Tensor x0 = gaussian_noise({events.dim(0), c.T, c.D}, cfg.seed);
  return euler_integrate(x0, cfg.nfe, model_field(model, events, context));
}

MagnitudeReport variant_magnitude_report(backbone::Model& model, const Tensor& x_t, const Tensor& events,
                                         const Tensor& context, double t) {
  Tape tape;
  const auto f = model.evaluate(tape, x_t, make_cond(events, context, t));
  const std::size_t B = x_t.dim(0), T = x_t.dim(1), D = x_t.dim(2);
  MagnitudeReport r;
  r.v_var.assign(T, 0.0);
  r.v_total.assign(T, 0.0);
  const Tensor& vv = f.v_var.value();
  const Tensor& vt = f.v_total.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < T; ++s) {
      double nv = 0.0, nt = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        const std::size_t k = (b * T + s) * D + d;
        nv += vv[k] * vv[k];
        nt += vt[k] * vt[k];
      }
      r.v_var[s] += std::sqrt(nv) / static_cast<double>(B);
      r.v_total[s] += std::sqrt(nt) / static_cast<double>(B);
    }
  for (std::size_t s = 0; s < T; ++s) {
    r.mean_var += r.v_var[s] / static_cast<double>(T);
    r.mean_total += r.v_total[s] / static_cast<double>(T);
  }
  return r;
}

void RhcConfig::validate() const {
  if (execute < 1 || execute > horizon) throw ConfigError("rhc: need 1 <= execute <= horizon");
}

RhcResult rhc_execute(Environment& env, const Policy& policy, const RhcConfig& cfg, std::size_t episode_len) {
  cfg.validate();
  std::vector<double> executed;
  RhcResult r;
  std::size_t done = 0, D = 0;
  bool running = true;
  while (running && done < episode_len) {
    const Observation obs = env.observe();
    const auto start = std::chrono::steady_clock::now();
    const Tensor plan = policy(obs);
    const auto stop = std::chrono::steady_clock::now();
    r.plan_ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    if (plan.rank() != 2 || plan.dim(0) < cfg.horizon) throw DimensionError("rhc: plan is shorter than the horizon");
    D = plan.dim(1);
    const std::size_t k = std::min(cfg.execute, episode_len - done);
    for (std::size_t j = 0; j < k; ++j) {
      const auto row = plan.data().subspan(j * D, D);
      executed.insert(executed.end(), row.begin(), row.end());
      ++done;
      if (!env.step(row)) {
        running = false;
        break;
      }
    }
  }
  r.executed = Tensor({done, D}, std::move(executed));
  return r;
}

Policy model_policy(backbone::Model& model, SamplerConfig cfg) {
  auto calls = std::make_shared<std::uint64_t>(0);
  return [&model, cfg, calls](const Observation& obs) {
    const auto& c = model.config();
    SamplerConfig s = cfg;
    s.seed = cfg.seed + (*calls)++;
    const Tensor events = obs.events.reshaped({1, c.T});
    const Tensor context({1, c.context_dim}, obs.context);
    return euler_sample(model, events, context, s).reshaped({c.T, c.D});
  };
}

double trajectory_mse(backbone::Model& model, const Batch& data, std::size_t nfe, std::uint64_t seed) {
  const Tensor x = euler_sample(model, data.events, data.context, {nfe, seed});
  return mean_sq_diff(x, data.x1);
}

double flow_matching_loss(backbone::Model& model, const Batch& data, std::uint64_t seed) {
  const std::size_t B = data.size();
  const Tensor x0 = gaussian_noise(data.x1.shape(), seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> t(B);
  for (double& v : t) v = unit(rng);
  Tape tape;
  const auto f = model.evaluate(tape, training::ot_interpolate(x0, data.x1, t), {data.events, data.context, t});
  Tensor target = data.x1;
  for (std::size_t i = 0; i < target.size(); ++i) target[i] -= x0[i];
  return mean_sq_diff(f.v_total.value(), target);
}

double inv_sensitivity(backbone::Model& model, const Batch& data, std::uint64_t seed) {
  const std::size_t B = data.size();
  const Tensor x0 = gaussian_noise(data.x1.shape(), seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> t1(B), t2(B);
  for (std::size_t b = 0; b < B; ++b) {
    t1[b] = unit(rng);
    t2[b] = unit(rng);
  }
  Tape tape;
  const auto a = model.evaluate(tape, training::ot_interpolate(x0, data.x1, t1), {data.events, data.context, t1});
  const auto b = model.evaluate(tape, training::ot_interpolate(x0, data.x1, t2), {data.events, data.context, t2});
  const Tensor& va = a.v_inv.value();
  const Tensor& vb = b.v_inv.value();
  const std::size_t n = va.size() / B;
  double total = 0.0;
  for (std::size_t e = 0; e < B; ++e) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (va[e * n + i] - vb[e * n + i]) * (va[e * n + i] - vb[e * n + i]);
    total += std::sqrt(s);
  }
  return total / static_cast<double>(B);
}

}  // namespace kflow::inference
