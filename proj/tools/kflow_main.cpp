#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>

#include "CLI11.hpp"
#include "kflow/backbone.hpp"
#include "kflow/checkpoint.hpp"
#include "kflow/config.hpp"
#include "kflow/dataset.hpp"
#include "kflow/error.hpp"
#include "kflow/inference.hpp"
#include "kflow/kernels.hpp"
#include "kflow/koopman.hpp"
#include "kflow/synthbench.hpp"
#include "kflow/training.hpp"

using namespace kflow;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out.precision(10);
  return out;
}

KeyValues load_or_empty(const std::string& path) { return path.empty() ? KeyValues{} : load_key_values(path); }

// Model and training settings from one flat file; the dataset fixes T, D and
// the context width unless the file overrides them.
std::pair<backbone::BackboneConfig, training::TrainConfig> read_run_config(const std::string& path,
                                                                           const Dataset& data) {
  KeyValues kv = load_or_empty(path);
  kv.try_emplace("T", std::to_string(data.T));
  kv.try_emplace("D", std::to_string(data.D));
  kv.try_emplace("context_dim", std::to_string(data.C));
  ConfigReader r(kv);
  auto mc = backbone::BackboneConfig::read(r);
  auto tc = training::TrainConfig::read(r);
  r.reject_unknown();
  if (mc.T != data.T || mc.D != data.D || mc.context_dim != data.C) {
    throw ConfigError("config T/D/context_dim do not match the dataset");
  }
  return {mc, tc};
}

void save_model(const std::string& path, const backbone::Model& model, const training::TrainConfig& tc) {
  Checkpoint ck = model.to_checkpoint();
  KeyValues kv = parse_key_values(ck.texts["config"]);
  tc.write(kv);
  ck.texts["config"] = format_key_values(kv);
  save_checkpoint(path, ck);
}

int cmd_gen(const std::string& spec_path, const std::string& out, std::size_t count, std::size_t first) {
  ConfigReader r(load_or_empty(spec_path));
  const auto spec = synthbench::GenSpec::read(r);
  count = r.count("count", count);
  first = r.count("first_index", first);
  r.reject_unknown();
  const Dataset data = synthbench::generate_dataset(spec, count, first);
  save_dataset(out, data);
  std::cout << "wrote " << data.size() << " trajectories (T=" << data.T << ", D=" << data.D << ", C=" << data.C
            << ") to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& data_path, const std::string& config, const std::string& out,
              const std::string& log_path, std::size_t every) {
  const Dataset data = load_dataset(data_path);
  const auto [mc, tc] = read_run_config(config, data);
  backbone::Model model(mc);
  training::Trainer trainer(model, tc);
  std::ofstream log_file;
  std::unique_ptr<training::TrainLog> log;
  if (!log_path.empty()) {
    log_file = open_out(log_path);
    log = std::make_unique<training::TrainLog>(log_file);
  }
  const auto start = std::chrono::steady_clock::now();
  trainer.fit(data, [&](std::size_t step, const training::LossBreakdown& l) {
    if (log) log->row(step, l, model);
    if (every > 0 && step % every == 0) save_model(out, model, tc);
    if (step % 100 == 0 || step == tc.steps) {
      std::cout << "step " << step << " total " << l.total << " fm " << l.fm << " ct " << l.ct << "\n";
    }
  });
  model.tracker().freeze();
  save_model(out, model, tc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "trained " << tc.steps << " steps in " << secs << " s; kept " << model.tracker().mask().kept() << "/"
            << model.tracker().mask().bins() << " bins; wrote " << out << "\n";
  return 0;
}

int cmd_sample(const std::string& ckpt, std::size_t nfe, const std::string& out, const std::string& data_path,
               std::size_t first, std::size_t count, std::uint64_t seed) {
  auto model = backbone::Model::from_checkpoint(load_checkpoint(ckpt));
  const auto& c = model.config();
  Batch cond;
  if (!data_path.empty()) {
    const Dataset data = load_dataset(data_path);
    if (first + count > data.size()) throw ConfigError("sample: trajectory range exceeds the dataset");
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), first);
    cond = make_batch(data, idx);
  } else {
    cond = {Tensor({count, c.T, c.D}), Tensor({count, c.T}), Tensor({count, c.context_dim})};
  }
  const Tensor x = inference::euler_sample(model, cond.events, cond.context, {nfe, seed});
  Tape tape;
  const Tensor x0 = inference::gaussian_noise({count, c.T, c.D}, seed);
  const auto f = model.evaluate(tape, x0, {cond.events, cond.context, std::vector<double>(count, 0.0)});
  auto csv = open_out(out);
  csv << "traj,tau";
  for (std::size_t d = 0; d < c.D; ++d) csv << ",a" << d;
  csv << ",v_inv_norm,v_var_norm\n";
  for (std::size_t b = 0; b < count; ++b)
    for (std::size_t s = 0; s < c.T; ++s) {
      csv << first + b << ',' << s;
      double ni = 0.0, nv = 0.0;
      for (std::size_t d = 0; d < c.D; ++d) {
        const std::size_t k = (b * c.T + s) * c.D + d;
        csv << ',' << x[k];
        ni += f.v_inv.value()[k] * f.v_inv.value()[k];
        nv += f.v_var.value()[k] * f.v_var.value()[k];
      }
      csv << ',' << std::sqrt(ni) << ',' << std::sqrt(nv) << '\n';
    }
  std::cout << "wrote " << count << " sampled trajectories (nfe=" << nfe << ") to " << out << "\n";
  return 0;
}

int cmd_ablate(const std::string& axis, const std::string& values, const std::string& data_path,
               const std::string& heldout_path, const std::string& config, const std::string& out, std::size_t nfe) {
  const Dataset train = load_dataset(data_path);
  const Dataset heldout = load_dataset(heldout_path);
  ConfigReader vr({{"values", values}});
  const auto vals = vr.reals("values", {});
  synthbench::AblationInputs in;
  std::tie(in.model, in.train) = read_run_config(config, train);
  in.nfe = nfe;
  const auto rows = synthbench::ablation_sweep(axis, vals, in, train, heldout, [](const synthbench::AblationRow& r) {
    std::cout << r.axis << "=" << r.value << " mse " << r.trajectory_mse << " corr " << r.event_corr << " inv "
              << r.inv_stability << (r.error.empty() ? "" : " error: " + r.error) << "\n";
  });
  auto csv = open_out(out);
  synthbench::write_ablation_csv(csv, rows);
  return 0;
}

int cmd_bench_dmd(std::size_t d, std::size_t window, std::size_t iters, double lambda, bool serial) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> win(window * d), kt(d * d);
  for (double& v : win) v = n(rng);
  const std::size_t rank = std::min(d, window - 1);
  std::vector<double> us;
  us.reserve(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    const auto a = std::chrono::steady_clock::now();
    if (serial) {
      kernels::serial::batched_dmd_svd(1, window, d, lambda, rank, win, kt);
    } else {
      kernels::parallel::batched_dmd_svd(1, window, d, lambda, rank, win, kt);
    }
    us.push_back(std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - a).count());
  }
  std::sort(us.begin(), us.end());
  const double mean = std::accumulate(us.begin(), us.end(), 0.0) / static_cast<double>(us.size());
  std::cout << "dmd_fit_svd d=" << d << " window=" << window << " iters=" << iters << ": median " << us[us.size() / 2]
            << " us, mean " << mean << " us, p99 " << us[us.size() * 99 / 100] << " us\n";
  return 0;
}

int cmd_analyze(const std::string& ckpt, const std::string& data_path, const std::string& out, std::size_t support,
                std::size_t draws, std::uint64_t seed) {
  auto model = backbone::Model::from_checkpoint(load_checkpoint(ckpt));
  const Dataset data = load_dataset(data_path);
  const auto& c = model.config();
  const Batch batch = make_batch(data);
  const std::size_t B = batch.size();
  std::vector<double> e_inv(B * c.T, 0.0), e_var(B * c.T, 0.0);
  for (std::size_t k = 0; k < draws; ++k) {
    Tape tape;
    const auto f = model.evaluate(tape, inference::gaussian_noise({B, c.T, c.D}, seed + k),
                                  {batch.events, batch.context, std::vector<double>(B, 0.0)});
    for (std::size_t i = 0; i < B * c.T; ++i)
      for (std::size_t d = 0; d < c.D; ++d) {
        e_inv[i] += std::pow(f.v_inv.value()[i * c.D + d], 2) / static_cast<double>(draws);
        e_var[i] += std::pow(f.v_var.value()[i * c.D + d], 2) / static_cast<double>(draws);
      }
  }
  auto csv = open_out(out);
  csv << "traj,tau,event,event_dilated,v_inv_energy,v_var_energy,naive_energy\n";
  std::vector<double> model_series, naive_series, events;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& tr = data.items[b];
    const auto naive = synthbench::naive_rfft_baseline(tr.actions, model.tracker().mask());
    const auto dil = synthbench::dilate_events(tr.events, support);
    for (std::size_t s = 0; s < c.T; ++s) {
      csv << b << ',' << s << ',' << int(tr.events[s]) << ',' << dil[s] << ',' << e_inv[b * c.T + s] << ','
          << e_var[b * c.T + s] << ',' << naive[s] << '\n';
    }
    const auto m = synthbench::energy_differences(std::span<const double>(e_var.data() + b * c.T, c.T));
    const auto n = synthbench::energy_differences(naive);
    model_series.insert(model_series.end(), m.begin(), m.end());
    naive_series.insert(naive_series.end(), n.begin(), n.end());
    events.insert(events.end(), dil.begin() + 1, dil.end());
  }
  // Same series as synthbench::correlation_analysis, but a constant series
  // is reported instead of aborting.
  auto pearson = [&](const std::vector<double>& series) -> std::string {
    try {
      return std::to_string(synthbench::event_correlation(series, events));
    } catch (const NumericError& e) {
      return std::string("undefined (") + e.what() + ")";
    }
  };
  std::cout << "kept " << model.tracker().mask().kept() << "/" << model.tracker().mask().keep.size() << " bins\n"
            << "pearson(v_var energy change, events) = " << pearson(model_series) << "\n"
            << "pearson(naive rfft energy change, events) = " << pearson(naive_series) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kflow: spectrally decoupled flow-matching policy on synthetic trajectories"};
  app.require_subcommand(1);

  std::string spec_path, out, data_path, config, ckpt, log_path, axis, values, heldout;
  std::size_t count = 512, first = 0, every = 0, nfe = 1, d = 128, window = 4, iters = 10000, support = 3, draws = 8;
  std::uint64_t seed = 0;
  double lambda = 1e-3;
  bool serial = false;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "key=value generator spec");
  gen->add_option("--out", out, "output dataset file")->required();
  gen->add_option("--count", count, "number of trajectories");
  gen->add_option("--first-index", first, "index of the first trajectory (use disjoint ranges for held-out data)");

  auto* train = app.add_subcommand("train", "fused co-training");
  train->add_option("--data", data_path, "training dataset")->required();
  train->add_option("--config", config, "key=value model and training config");
  train->add_option("--out", ckpt, "output checkpoint")->required();
  train->add_option("--log", log_path, "per-step CSV log");
  train->add_option("--checkpoint-every", every, "also write the checkpoint every N steps");

  auto* sample = app.add_subcommand("sample", "Euler sampling");
  sample->add_option("--ckpt", ckpt, "checkpoint")->required();
  sample->add_option("--nfe", nfe, "Euler steps");
  sample->add_option("--out", out, "output CSV")->required();
  sample->add_option("--data", data_path, "dataset providing the conditioning");
  sample->add_option("--first", first, "first trajectory of the dataset to condition on");
  sample->add_option("--count", count, "number of trajectories")->default_val(1);
  sample->add_option("--seed", seed, "noise seed");

  auto* ablate = app.add_subcommand("ablate", "one-axis ablation sweep");
  ablate->add_option("--axis", axis, "lambda_dec | r_ct | alpha | nfe")->required();
  ablate->add_option("--values", values, "comma-separated values")->required();
  ablate->add_option("--data", data_path, "training dataset")->required();
  ablate->add_option("--heldout", heldout, "held-out dataset")->required();
  ablate->add_option("--config", config, "key=value model and training config");
  ablate->add_option("--nfe", nfe, "Euler steps for the non-nfe axes");
  ablate->add_option("--out", out, "output CSV")->required();

  auto* bench = app.add_subcommand("bench-dmd", "time the truncated-SVD localized DMD fit");
  bench->add_option("--d", d, "latent dimension");
  bench->add_option("--window", window, "window length");
  bench->add_option("--iters", iters, "iterations");
  bench->add_option("--lambda", lambda, "Tikhonov damping");
  bench->add_flag("--serial", serial, "use the serial kernel");

  auto* analyze = app.add_subcommand("analyze", "energy profiles and event correlations");
  analyze->add_option("--ckpt", ckpt, "checkpoint")->required();
  analyze->add_option("--data", data_path, "held-out dataset")->required();
  analyze->add_option("--out", out, "output CSV")->required();
  analyze->add_option("--support", support, "event dilation in steps");
  analyze->add_option("--draws", draws, "noise draws averaged per trajectory");
  analyze->add_option("--seed", seed, "noise seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen(spec_path, out, count, first);
    if (*train) return cmd_train(data_path, config, ckpt, log_path, every);
    if (*sample) return cmd_sample(ckpt, nfe, out, data_path, first, count, seed);
    if (*ablate) return cmd_ablate(axis, values, data_path, heldout, config, out, nfe);
    if (*bench) {
      if (window < 2 || iters == 0) throw ConfigError("bench-dmd: need window >= 2 and iters >= 1");
      return cmd_bench_dmd(d, window, iters, lambda, serial);
    }
    if (*analyze) return cmd_analyze(ckpt, data_path, out, support, draws, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
