#include <algorithm>
#include <numeric>

#include "kflow/ops.hpp"
#include "ops_util.hpp"

namespace kflow {
namespace {

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// For each output flat index, the flat index of the source element.
std::vector<std::size_t> permute_map(const Shape& in, std::span<const std::size_t> order) {
  const auto in_st = strides_of(in);
  Shape out(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) out[i] = in[order[i]];
  const std::size_t n = numel(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(out.size(), 0);
  for (std::size_t f = 0; f < n; ++f) {
    std::size_t src = 0;
    for (std::size_t a = 0; a < out.size(); ++a) src += idx[a] * in_st[order[a]];
    map[f] = src;
    for (std::size_t a = out.size(); a-- > 0;) {
      if (++idx[a] < out[a]) break;
      idx[a] = 0;
    }
  }
  return map;
}

// Records out[i] = a[map[i]]; backward scatters (accumulating duplicates).
Var gather(std::string_view op, const Var& a, Shape out_shape, std::vector<std::size_t> map) {
  const Tensor& av = a.value();
  Tensor out(std::move(out_shape));
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = av[map[i]];
  const std::size_t ia = a.id();
  const Var inputs[] = {a};
  return a.tape().record(op, std::move(out), inputs, [ia, map = std::move(map)](Tape& t, const Tensor& g) {
    auto ga = t.grad_buffer(ia);
    if (ga.empty()) return;
    for (std::size_t i = 0; i < map.size(); ++i) ga[map[i]] += g[i];
  });
}

}  // namespace

Var reshape(const Var& a, Shape shape) {
  if (numel(shape) != a.value().size()) {
    throw DimensionError("reshape: " + to_string(a.shape()) + " to " + to_string(shape));
  }
  const std::size_t ia = a.id();
  const Var inputs[] = {a};
  return a.tape().record("reshape", a.value().reshaped(std::move(shape)), inputs, [ia](Tape& t, const Tensor& g) {
    detail::add_into(t.grad_buffer(ia), g.data());
  });
}

Var permute(const Var& a, std::span<const std::size_t> order) {
  const Shape& s = a.shape();
  std::vector<std::size_t> sorted(order.begin(), order.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> expect(s.size());
  std::iota(expect.begin(), expect.end(), std::size_t{0});
  if (sorted != expect) throw DimensionError("permute: order is not a permutation of the axes of " + to_string(s));
  Shape out(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) out[i] = s[order[i]];
  return gather("permute", a, std::move(out), permute_map(s, order));
}

Var transpose(const Var& a) {
  detail::require_rank("transpose", a, 2);
  const std::size_t order[] = {1, 0};
  return permute(a, order);
}

Var transpose_last2(const Var& a) {
  detail::require_rank("transpose_last2", a, 3);
  const std::size_t order[] = {0, 2, 1};
  return permute(a, order);
}

Var expand(const Var& a, std::size_t axis, std::size_t count) {
  const Shape& s = a.shape();
  if (axis > s.size()) throw DimensionError("expand: axis out of range for " + to_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis; i < s.size(); ++i) inner *= s[i];
  Shape out = s;
  out.insert(out.begin() + static_cast<std::ptrdiff_t>(axis), count);
  std::vector<std::size_t> map;
  map.reserve(outer * count * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < count; ++c)
      for (std::size_t i = 0; i < inner; ++i) map.push_back(o * inner + i);
  return gather("expand", a, std::move(out), std::move(map));
}

Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t length) {
  const auto sp = detail::split_axis(a.shape(), axis, "slice");
  if (start + length > sp.len) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis length " + std::to_string(sp.len));
  }
  Shape out = a.shape();
  out[axis] = length;
  std::vector<std::size_t> map;
  map.reserve(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < length; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) map.push_back((o * sp.len + start + l) * sp.inner + i);
  return gather("slice", a, std::move(out), std::move(map));
}

Var index_select(const Var& a, std::size_t axis, std::span<const std::size_t> indices) {
  const auto sp = detail::split_axis(a.shape(), axis, "index_select");
  for (std::size_t k : indices)
    if (k >= sp.len) throw DimensionError("index_select: index " + std::to_string(k) + " out of range");
  Shape out = a.shape();
  out[axis] = indices.size();
  std::vector<std::size_t> map;
  map.reserve(sp.outer * indices.size() * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k : indices)
      for (std::size_t i = 0; i < sp.inner; ++i) map.push_back((o * sp.len + k) * sp.inner + i);
  return gather("index_select", a, std::move(out), std::move(map));
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Tape& tape = parts[0].tape();
  const Shape& s0 = parts[0].shape();
  const auto sp0 = detail::split_axis(s0, axis, "concat");
  std::size_t total = 0;
  std::vector<std::size_t> lens;
  for (const Var& p : parts) {
    if (&p.tape() != &tape) throw ContractError("concat: operands recorded on different tapes");
    Shape s = p.shape();
    if (s.size() != s0.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) {
        throw DimensionError("concat: shapes " + to_string(s0) + " and " + to_string(s) + " differ off-axis");
      }
    lens.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  Tensor out(out_shape);
  const std::size_t outer = sp0.outer, inner = sp0.inner;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < lens[k]; ++l)
        for (std::size_t i = 0; i < inner; ++i)
          out[(o * total + offset + l) * inner + i] = v[(o * lens[k] + l) * inner + i];
    offset += lens[k];
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return tape.record("concat", std::move(out), parts,
                     [ids, lens, outer, inner, total](Tape& t, const Tensor& g) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         auto gk = t.grad_buffer(ids[k]);
                         if (!gk.empty()) {
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t l = 0; l < lens[k]; ++l)
                               for (std::size_t i = 0; i < inner; ++i)
                                 gk[(o * lens[k] + l) * inner + i] += g[(o * total + off + l) * inner + i];
                         }
                         off += lens[k];
                       }
                     });
}

}  // namespace kflow
