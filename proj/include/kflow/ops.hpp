#pragma once

// Differentiable operations on tape values.
//
// Broadcasting is limited to scalar-vs-tensor (an operand with one element)
// and equal shapes; anything else is a DimensionError. Use expand() to
// repeat along a new axis explicitly.

#include <cstddef>
#include <span>
#include <vector>

#include "kflow/tape.hpp"

namespace kflow {

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var abs(const Var& a);  // subgradient 0 at exactly 0
Var square(const Var& a);
Var relu(const Var& a);
Var tanh(const Var& a);
Var silu(const Var& a);

// Reductions
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_axis(const Var& a, std::size_t axis);  // removes the axis
Var mean_axis(const Var& a, std::size_t axis);

// Linear algebra
Var matmul(const Var& a, const Var& b);          // [m×k]·[k×n]
Var batched_matmul(const Var& a, const Var& b);  // [b×m×k]·[b×k×n]
// Rows of x (all leading axes flattened) times w[k×n]: [...×k] → [...×n].
Var linear(const Var& x, const Var& w);
// A⁻¹·B for symmetric positive definite A[d×d], B[d×n] via Cholesky.
Var spd_solve(const Var& a, const Var& b);
// Per-item spd_solve over A[b×d×d], B[b×d×n].
Var batched_spd_solve(const Var& a, const Var& b);

// Shape manipulation
Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a);        // [m×n] → [n×m]
Var transpose_last2(const Var& a);  // [b×m×n] → [b×n×m]
Var permute(const Var& a, std::span<const std::size_t> order);
// Inserts a new axis of size `count` at `axis`, repeating the input.
Var expand(const Var& a, std::size_t axis, std::size_t count);
Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t length);
Var concat(std::span<const Var> parts, std::size_t axis);
// Picks entries along `axis`; repeated indices accumulate in backward.
Var index_select(const Var& a, std::size_t axis, std::span<const std::size_t> indices);

// Normalization and attention primitives (all over the last axis)
Var layer_norm(const Var& x, double eps);
Var softmax_lastdim(const Var& x);
// x / max(‖x‖₂, eps) per row of the last axis.
Var l2_normalize_lastdim(const Var& x, double eps);

// Real DFT along `axis`: length T becomes T/2 + 1 bins and a trailing axis
// of size 2 (re, im) is appended. Requires T >= 2.
Var rfft_axis(const Var& x, std::size_t axis);
// Inverse of rfft_axis producing length `n` along `axis` (drops the trailing
// re/im axis).
Var irfft_axis(const Var& spectrum, std::size_t axis, std::size_t n);

// Losses
Var mse(const Var& prediction, const Var& target);
Var mean_abs(const Var& a);

}  // namespace kflow
