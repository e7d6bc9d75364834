#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "kflow/ops.hpp"
#include "kflow/tape.hpp"
#include "kflow/tensor.hpp"

namespace kflow::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline Tensor random_spd(std::size_t d, std::mt19937_64& rng, double shift = 1.0) {
  const Tensor m = random_tensor({d, d}, rng);
  Tensor a({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += m.at(i, k) * m.at(j, k);
      a.at(i, j) = s + (i == j ? shift : 0.0);
    }
  return a;
}

using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Norm-wise relative error between the tape gradient and central differences
// of f with respect to every input, worst over inputs.
inline double gradient_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double h = 1e-5) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& x : inputs) leaves.push_back(tape.leaf(x));
  tape.backward(f(tape, leaves));

  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Var> vs;
    for (const Tensor& x : xs) vs.push_back(t.constant(x));
    return f(t, vs).value().item();
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = leaves[k].grad().value_or(Tensor(inputs[k].shape()));
    std::vector<Tensor> xs = inputs;
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x = inputs[k][i];
      xs[k][i] = x + h;
      const double fp = eval(xs);
      xs[k][i] = x - h;
      const double fm = eval(xs);
      xs[k][i] = x;
      const double num = (fp - fm) / (2.0 * h);
      diff += (analytic[i] - num) * (analytic[i] - num);
      na += analytic[i] * analytic[i];
      nn += num * num;
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

// Weighted sum with fixed random weights turns any output into a scalar
// whose gradient exercises every output element.
inline Var weighted_sum(const Var& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  const Tensor w = random_tensor(y.shape(), rng);
  return sum(mul(y, y.tape().constant(w)));
}

}  // namespace kflow::testing
