#include <cmath>

#include "kflow/kernels.hpp"
#include "kflow/ops.hpp"
#include "ops_util.hpp"

namespace kflow {
namespace {

enum class Pairing { Same, LeftScalar, RightScalar };

Pairing pair_shapes(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Pairing::Same;
  if (a.size() == 1) return Pairing::LeftScalar;
  if (b.size() == 1) return Pairing::RightScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                       to_string(b.shape()));
}

// Binary elementwise op with partials da(x, y), db(x, y).
template <class F, class DA, class DB>
Var binary(std::string_view op, const Var& a, const Var& b, F f, DA da, DB db) {
  Tape& tape = detail::common_tape(op, a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Pairing p = pair_shapes(op, av, bv);
  const std::size_t sa = p == Pairing::LeftScalar ? 0 : 1;  // index strides
  const std::size_t sb = p == Pairing::RightScalar ? 0 : 1;
  Tensor out(p == Pairing::LeftScalar ? bv.shape() : av.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i * sa], bv[i * sb]);

  const std::size_t ia = a.id(), ib = b.id();
  const Var inputs[] = {a, b};
  return tape.record(op, std::move(out), inputs, [ia, ib, sa, sb, n, da, db](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    auto ga = t.grad_buffer(ia);
    auto gb = t.grad_buffer(ib);
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = x[i * sa], yi = y[i * sb];
      if (!ga.empty()) ga[i * sa] += g[i] * da(xi, yi);
      if (!gb.empty()) gb[i * sb] += g[i] * db(xi, yi);
    }
  });
}

// Unary elementwise op with derivative d(x).
template <class F, class D>
Var unary(std::string_view op, const Var& a, F f, D d) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.id();
  const Var inputs[] = {a};
  return a.tape().record(op, std::move(out), inputs, [ia, d](Tape& t, const Tensor& g) {
    auto ga = t.grad_buffer(ia);
    const Tensor& x = t.value(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * d(x[i]);
  });
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scale(const Var& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; }, [factor](double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
  return unary(
      "add_scalar", a, [offset](double x) { return x + offset; }, [](double) { return 1.0; });
}

Var abs(const Var& a) {
  return unary(
      "abs", a, [](double x) { return std::abs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var relu(const Var& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double y = std::tanh(x);
        return 1.0 - y * y;
      });
}

Var silu(const Var& a) {
  return unary(
      "silu", a, [](double x) { return x * sigmoid(x); },
      [](double x) {
        const double s = sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  const Var inputs[] = {a};
  return a.tape().record("sum", Tensor::scalar(s), inputs, [ia](Tape& t, const Tensor& g) {
    auto ga = t.grad_buffer(ia);
    for (double& v : ga) v += g[0];
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_axis(const Var& a, std::size_t axis) {
  const auto sp = detail::split_axis(a.shape(), axis, "sum_axis");
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape);
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += x[(o * sp.len + l) * sp.inner + i];
  const std::size_t ia = a.id();
  const Var inputs[] = {a};
  return a.tape().record("sum_axis", std::move(out), inputs, [ia, sp](Tape& t, const Tensor& g) {
    auto ga = t.grad_buffer(ia);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t l = 0; l < sp.len; ++l)
        for (std::size_t i = 0; i < sp.inner; ++i) ga[(o * sp.len + l) * sp.inner + i] += g[o * sp.inner + i];
  });
}

Var mean_axis(const Var& a, std::size_t axis) {
  const std::size_t len = a.value().dim(axis);
  return scale(sum_axis(a, axis), 1.0 / static_cast<double>(len));
}

Var matmul(const Var& a, const Var& b) {
  Tape& tape = detail::common_tape("matmul", a, b);
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + to_string(a.shape()) + " · " + to_string(b.shape()));
  }
  Tensor out({m, n});
  kernels::parallel::gemm({false, false, m, n, k, false}, a.value().data(), b.value().data(), out.data());
  const std::size_t ia = a.id(), ib = b.id();
  const Var inputs[] = {a, b};
  return tape.record("matmul", std::move(out), inputs, [ia, ib, m, n, k](Tape& t, const Tensor& g) {
    if (auto ga = t.grad_buffer(ia); !ga.empty())  // dA = G·Bᵀ
      kernels::parallel::gemm({false, true, m, k, n, true}, g.data(), t.value(ib).data(), ga);
    if (auto gb = t.grad_buffer(ib); !gb.empty())  // dB = Aᵀ·G
      kernels::parallel::gemm({true, false, k, n, m, true}, t.value(ia).data(), g.data(), gb);
  });
}

Var batched_matmul(const Var& a, const Var& b) {
  Tape& tape = detail::common_tape("batched_matmul", a, b);
  detail::require_rank("batched_matmul", a, 3);
  detail::require_rank("batched_matmul", b, 3);
  const std::size_t nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != nb || b.dim(1) != k) {
    throw DimensionError("batched_matmul: incompatible " + to_string(a.shape()) + " · " + to_string(b.shape()));
  }
  Tensor out({nb, m, n});
  kernels::parallel::batched_gemm(nb, {false, false, m, n, k, false}, a.value().data(), b.value().data(),
                                  out.data());
  const std::size_t ia = a.id(), ib = b.id();
  const Var inputs[] = {a, b};
  return tape.record("batched_matmul", std::move(out), inputs, [ia, ib, nb, m, n, k](Tape& t, const Tensor& g) {
    if (auto ga = t.grad_buffer(ia); !ga.empty())
      kernels::parallel::batched_gemm(nb, {false, true, m, k, n, true}, g.data(), t.value(ib).data(), ga);
    if (auto gb = t.grad_buffer(ib); !gb.empty())
      kernels::parallel::batched_gemm(nb, {true, false, k, n, m, true}, t.value(ia).data(), g.data(), gb);
  });
}

Var linear(const Var& x, const Var& w) {
  detail::require_rank("linear", w, 2);
  const Shape& s = x.shape();
  if (s.empty() || s.back() != w.dim(0)) {
    throw DimensionError("linear: input " + to_string(s) + " does not match weight " + to_string(w.shape()));
  }
  const std::size_t rows = x.value().size() / s.back();
  Shape out_shape = s;
  out_shape.back() = w.dim(1);
  return reshape(matmul(reshape(x, {rows, s.back()}), w), out_shape);
}

Var mse(const Var& prediction, const Var& target) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError("mse: shapes differ " + to_string(prediction.shape()) + " vs " +
                         to_string(target.shape()));
  }
  return mean(square(sub(prediction, target)));
}

Var mean_abs(const Var& a) { return mean(abs(a)); }

}  // namespace kflow
