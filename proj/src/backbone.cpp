#include "kflow/backbone.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "kflow/error.hpp"
#include "kflow/ops.hpp"

namespace kflow::backbone {
namespace {

constexpr double kLayerNormEps = 1e-6;

Tensor gaussian(Shape shape, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, std);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = n(rng);
  return t;
}

// N(0, 1/fan_in) weights.
Tensor dense(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return gaussian({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

std::string block_name(std::size_t i, const char* leaf) { return "backbone.block" + std::to_string(i) + "." + leaf; }

}  // namespace

void BackboneConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("backbone config: " + m); };
  if (T < 4) fail("T must be >= 4");
  if (D < 1 || context_dim < 1 || hidden < 1 || d < 1 || mlp_ratio < 1) fail("dimensions must be >= 1");
  if (heads < 1 || hidden % heads != 0) fail("hidden must be divisible by heads");
  if (fourier_dim < 2 || fourier_dim % 2 != 0) fail("fourier_dim must be even and >= 2");
  if (!(alpha > 0.0 && alpha <= 1.0)) fail("alpha must lie in (0, 1]");
  if (!(dmd_lambda > 0.0)) fail("dmd_lambda must be > 0");
  if (!(time_freq_std > 0.0)) fail("time_freq_std must be > 0");
  if (!(mask_decay >= 0.0 && mask_decay < 1.0)) fail("mask_decay must lie in [0, 1)");
}

void BackboneConfig::write(KeyValues& kv) const {
  kv["T"] = std::to_string(T);
  kv["D"] = std::to_string(D);
  kv["context_dim"] = std::to_string(context_dim);
  kv["hidden"] = std::to_string(hidden);
  kv["blocks"] = std::to_string(blocks);
  kv["heads"] = std::to_string(heads);
  kv["fourier_dim"] = std::to_string(fourier_dim);
  kv["d"] = std::to_string(d);
  kv["mlp_ratio"] = std::to_string(mlp_ratio);
  kv["alpha"] = format_real(alpha);
  kv["dmd_lambda"] = format_real(dmd_lambda);
  kv["time_freq_std"] = format_real(time_freq_std);
  kv["mask_decay"] = format_real(mask_decay);
  kv["model_seed"] = std::to_string(seed);
}

BackboneConfig BackboneConfig::read(ConfigReader& r) {
  BackboneConfig c;
  c.T = r.count("T", c.T);
  c.D = r.count("D", c.D);
  c.context_dim = r.count("context_dim", c.context_dim);
  c.hidden = r.count("hidden", c.hidden);
  c.blocks = r.count("blocks", c.blocks);
  c.heads = r.count("heads", c.heads);
  c.fourier_dim = r.count("fourier_dim", c.fourier_dim);
  c.d = r.count("d", c.d);
  c.mlp_ratio = r.count("mlp_ratio", c.mlp_ratio);
  c.alpha = r.real("alpha", c.alpha);
  c.dmd_lambda = r.real("dmd_lambda", c.dmd_lambda);
  c.time_freq_std = r.real("time_freq_std", c.time_freq_std);
  c.mask_decay = r.real("mask_decay", c.mask_decay);
  c.seed = r.seed("model_seed", c.seed);
  c.validate();
  return c;
}

Var Binder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Parameter& p = params_.at(name);
  Var v = trainable_ ? tape_.param(p) : tape_.constant(p.value);
  bound_.emplace(name, v);
  return v;
}

Tensor gaussian_fourier_embed(std::span<const double> t, std::span<const double> freqs) {
  const std::size_t F = freqs.size();
  Tensor out({t.size(), 2 * F});
  for (std::size_t b = 0; b < t.size(); ++b)
    for (std::size_t f = 0; f < F; ++f) {
      const double arg = 2.0 * std::numbers::pi * freqs[f] * t[b];
      out[b * 2 * F + f] = std::sin(arg);
      out[b * 2 * F + F + f] = std::cos(arg);
    }
  return out;
}

Var add_bias(const Var& x, const Var& b) {
  const Shape& s = x.shape();
  if (b.shape().size() != 1 || s.empty() || s.back() != b.dim(0)) {
    throw DimensionError("add_bias: bias " + to_string(b.shape()) + " does not match " + to_string(s));
  }
  const std::size_t rows = x.value().size() / s.back();
  return add(x, reshape(expand(b, 0, rows), s));
}

Var adaln_modulate(const Var& x, const Var& shift, const Var& scale) {
  if (x.shape().size() != 3 || shift.shape() != scale.shape() || shift.shape().size() != 2 ||
      shift.dim(0) != x.dim(0) || shift.dim(1) != x.dim(2)) {
    throw DimensionError("adaln_modulate: x " + to_string(x.shape()) + " with shift/scale " +
                         to_string(shift.shape()));
  }
  const std::size_t T = x.dim(1);
  const Var n = layer_norm(x, kLayerNormEps);
  return add(mul(n, add_scalar(expand(scale, 1, T), 1.0)), expand(shift, 1, T));
}

AttentionResult qknorm_cross_attention(const Var& tokens, const Var& context, const AttentionWeights& w,
                                       std::size_t heads, double eps) {
  const Shape& ts = tokens.shape();
  const Shape& cs = context.shape();
  if (ts.size() != 3 || cs.size() != 3 || ts[0] != cs[0] || ts[2] != cs[2]) {
    throw DimensionError("attention: tokens " + to_string(ts) + " vs context " + to_string(cs));
  }
  const std::size_t B = ts[0], T = ts[1], S = cs[1], H = ts[2];
  if (heads == 0 || H % heads != 0) throw DimensionError("attention: width not divisible by heads");
  const std::size_t hd = H / heads;
  const std::size_t split_order[] = {0, 2, 1, 3};

  auto split_heads = [&](const Var& x, std::size_t len) {
    return reshape(permute(reshape(x, {B, len, heads, hd}), split_order), {B * heads, len, hd});
  };
  const Var q = l2_normalize_lastdim(split_heads(linear(tokens, w.q), T), eps);
  const Var k = l2_normalize_lastdim(split_heads(linear(context, w.k), S), eps);
  const Var v = split_heads(linear(context, w.v), S);

  AttentionResult r;
  r.logits = mul(batched_matmul(q, transpose_last2(k)), w.temperature);
  r.weights = softmax_lastdim(r.logits);
  const Var mixed = batched_matmul(r.weights, v);  // [B·heads × T × hd]
  const Var merged = reshape(permute(reshape(mixed, {B, heads, T, hd}), split_order), {B, T, H});
  r.out = linear(merged, w.o);
  return r;
}

Model::Model(BackboneConfig cfg) : cfg_(cfg), tracker_(cfg.T, cfg.alpha, cfg.mask_decay) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const std::size_t H = cfg_.hidden, D = cfg_.D, C = cfg_.context_dim, T = cfg_.T, F = cfg_.fourier_dim / 2;
  const std::size_t M = H * cfg_.mlp_ratio, d = cfg_.d;

  time_freqs_ = gaussian({F}, cfg_.time_freq_std, rng);

  auto& p = params_;
  p.add("backbone.in.w", dense(D, H, rng));
  p.add("backbone.in.b", Tensor({H}));
  p.add("backbone.in.event", dense(1, H, rng));
  p.add("backbone.pos", gaussian({T, H}, 0.1, rng));
  p.add("backbone.time.w1", dense(2 * F, H, rng));
  p.add("backbone.time.b1", Tensor({H}));
  p.add("backbone.time.w2", dense(H, H, rng));
  p.add("backbone.time.b2", Tensor({H}));
  p.add("backbone.ctx.w", dense(C, H, rng));
  p.add("backbone.ctx.b", Tensor({H}));
  p.add("backbone.cond.event.w", dense(1, H, rng));
  p.add("backbone.cond.event.b", Tensor({H}));
  p.add("backbone.cond.pos", gaussian({T, H}, 0.1, rng));
  p.add("backbone.cond.global.w", dense(C, H, rng));
  p.add("backbone.cond.global.b", Tensor({H}));
  for (std::size_t i = 0; i < cfg_.blocks; ++i) {
    p.add(block_name(i, "ada.w"), Tensor({H, 6 * H}));
    p.add(block_name(i, "ada.b"), Tensor({6 * H}));
    p.add(block_name(i, "attn.q"), dense(H, H, rng));
    p.add(block_name(i, "attn.k"), dense(H, H, rng));
    p.add(block_name(i, "attn.v"), dense(H, H, rng));
    p.add(block_name(i, "attn.o"), dense(H, H, rng));
    p.add(block_name(i, "attn.temp"), Tensor({1}, {std::sqrt(static_cast<double>(H / cfg_.heads))}));
    p.add(block_name(i, "mlp.w1"), dense(H, M, rng));
    p.add(block_name(i, "mlp.b1"), Tensor({M}));
    p.add(block_name(i, "mlp.w2"), dense(M, H, rng));
    p.add(block_name(i, "mlp.b2"), Tensor({H}));
  }
  p.add("backbone.proj_inv", dense(H, D, rng));
  p.add("backbone.proj_var", dense(H, D, rng));
  p.add("koopman.inv.enc", dense(H, d, rng));
  p.add("koopman.inv.K", Tensor::identity(d));
  p.add("koopman.inv.dec", dense(d, H, rng));
  p.add("koopman.var.enc", dense(H, d, rng));
  p.add("koopman.var.dec", dense(d, H, rng));
}

void Model::check_inputs(const Var& x_t, const Conditioning& cond) const {
  const std::size_t B = cond.batch();
  if (x_t.shape() != Shape{B, cfg_.T, cfg_.D}) {
    throw DimensionError("model: x_t " + to_string(x_t.shape()) + " does not match [" + std::to_string(B) + "×" +
                         std::to_string(cfg_.T) + "×" + std::to_string(cfg_.D) + "]");
  }
  if (cond.events.shape() != Shape{B, cfg_.T}) throw DimensionError("model: events must be [B×T]");
  if (cond.context.shape() != Shape{B, cfg_.context_dim}) throw DimensionError("model: context must be [B×C]");
  for (double t : cond.t)
    if (!(t >= 0.0 && t <= 1.0)) throw ContractError("model: t must lie in [0, 1]");
}

Var Model::trunk(Binder& p, const Var& x_t, const Conditioning& cond) const {
  check_inputs(x_t, cond);
  Tape& tape = p.tape();
  const std::size_t B = cond.batch(), T = cfg_.T, H = cfg_.hidden;

  const Var events = tape.constant(cond.events.reshaped({B, T, 1}));
  const Var context = tape.constant(cond.context);
  Var x = add_bias(linear(x_t, p("backbone.in.w")), p("backbone.in.b"));
  x = add(x, linear(events, p("backbone.in.event")));
  x = add(x, expand(p("backbone.pos"), 0, B));

  const Var emb = tape.constant(gaussian_fourier_embed(cond.t, time_freqs_.data()));
  const Var te = add_bias(linear(silu(add_bias(linear(emb, p("backbone.time.w1")), p("backbone.time.b1"))),
                                 p("backbone.time.w2")),
                          p("backbone.time.b2"));
  const Var c = add(te, add_bias(linear(context, p("backbone.ctx.w")), p("backbone.ctx.b")));
  const Var sc = silu(c);

  const Var ev_tokens = add(add_bias(linear(events, p("backbone.cond.event.w")), p("backbone.cond.event.b")),
                            expand(p("backbone.cond.pos"), 0, B));
  const Var global = reshape(add_bias(linear(context, p("backbone.cond.global.w")), p("backbone.cond.global.b")),
                             {B, 1, H});
  const Var parts[] = {ev_tokens, global};
  const Var ctx_tokens = concat(parts, 1);

  for (std::size_t i = 0; i < cfg_.blocks; ++i) {
    const Var mod = add_bias(linear(sc, p(block_name(i, "ada.w"))), p(block_name(i, "ada.b")));
    auto chunk = [&](std::size_t k) { return slice(mod, 1, k * H, H); };
    const AttentionWeights aw{p(block_name(i, "attn.q")), p(block_name(i, "attn.k")), p(block_name(i, "attn.v")),
                              p(block_name(i, "attn.o")), p(block_name(i, "attn.temp"))};
    const Var a = qknorm_cross_attention(adaln_modulate(x, chunk(0), chunk(1)), ctx_tokens, aw, cfg_.heads).out;
    x = add(x, mul(expand(chunk(2), 1, T), a));
    const Var h = adaln_modulate(x, chunk(3), chunk(4));
    const Var m = add_bias(
        linear(silu(add_bias(linear(h, p(block_name(i, "mlp.w1"))), p(block_name(i, "mlp.b1")))),
               p(block_name(i, "mlp.w2"))),
        p(block_name(i, "mlp.b2")));
    x = add(x, mul(expand(chunk(5), 1, T), m));
  }
  return x;
}

VelocityFields Model::head(Binder& p, const Var& h_in, const spectral::FrequencyMask& mask,
                           koopman::DmdSolver solver) const {
  const auto split = spectral::fourier_filter(h_in, mask);
  VelocityFields f;
  f.h_in = h_in;
  const Var inv = koopman::invariant_path(split.x_inv, p("koopman.inv.enc"), p("koopman.inv.K"), p("koopman.inv.dec"));
  const Var var = koopman::variant_path(split.x_var, p("koopman.var.enc"), p("koopman.var.dec"), cfg_.dmd_lambda,
                                        koopman::window_length(cfg_.T), solver);
  f.v_inv = linear(inv, p("backbone.proj_inv"));
  f.v_var = linear(var, p("backbone.proj_var"));
  f.v_total = add(f.v_inv, f.v_var);
  return f;
}

VelocityFields Model::forward(Binder& p, const Var& x_t, const Conditioning& cond,
                              const spectral::FrequencyMask& mask, koopman::DmdSolver solver) const {
  return head(p, trunk(p, x_t, cond), mask, solver);
}

VelocityFields Model::evaluate(Tape& tape, const Tensor& x_t, const Conditioning& cond) {
  Binder p(tape, params_, false);
  if (tracker_.ready()) return forward(p, tape.constant(x_t), cond, tracker_.mask(), koopman::DmdSolver::Svd);
  // Untrained model: mask from this batch's own h_in, not stored.
  const Var h = trunk(p, tape.constant(x_t), cond);
  const auto mask = spectral::select_mask(spectral::amplitude_spectrum(h.value()), cfg_.alpha);
  return head(p, h, mask, koopman::DmdSolver::Svd);
}

Checkpoint Model::to_checkpoint() const {
  Checkpoint ck;
  for (const auto& [name, param] : params_) ck.tensors.emplace(name, param.value);
  ck.tensors.emplace("backbone.time.freqs", time_freqs_);
  ck.tensors.emplace("spectral.mask", tracker_.to_tensor());
  KeyValues kv;
  cfg_.write(kv);
  ck.texts.emplace("config", format_key_values(kv));
  return ck;
}

Model Model::from_checkpoint(const Checkpoint& ckpt) {
  ConfigReader r(parse_key_values(ckpt.text("config")));
  Model m(BackboneConfig::read(r));
  for (auto& [name, param] : m.params_) {
    const Tensor& t = ckpt.tensor(name);
    if (t.shape() != param.value.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + to_string(t.shape()) + ", expected " +
                        to_string(param.value.shape()));
    }
    param.value = t;
  }
  const Tensor& freqs = ckpt.tensor("backbone.time.freqs");
  if (freqs.shape() != m.time_freqs_.shape()) throw FormatError("checkpoint time frequencies have the wrong shape");
  m.time_freqs_ = freqs;
  m.tracker_ = spectral::SpectralTracker::from_tensor(ckpt.tensor("spectral.mask"), m.cfg_.T, m.cfg_.mask_decay);
  return m;
}

}  // namespace kflow::backbone
