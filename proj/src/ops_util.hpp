#pragma once

#include <span>
#include <string>
#include <string_view>

#include "kflow/error.hpp"
#include "kflow/tape.hpp"

namespace kflow::detail {

inline Tape& common_tape(std::string_view op, const Var& a, const Var& b) {
  Tape& t = a.tape();
  if (&b.tape() != &t) throw ContractError(std::string(op) + ": operands recorded on different tapes");
  return t;
}

inline void add_into(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

inline void require_rank(std::string_view op, const Var& v, std::size_t rank) {
  if (v.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         to_string(v.shape()));
  }
}

// Splits a shape around `axis` into (outer, len, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis, std::string_view op) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + to_string(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace kflow::detail
