#include <numeric>

#include "kflow/checkpoint.hpp"
#include "kflow/dataset.hpp"
#include "kflow/error.hpp"

namespace kflow {
namespace {

constexpr char kMagic[] = "KFDATA1";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

}  // namespace

void Dataset::validate() const {
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    if (it.actions.shape() != Shape{T, D} || it.events.size() != T || it.context.size() != C) {
      throw DimensionError("dataset item " + std::to_string(i) + " does not match T/D/C");
    }
    for (auto e : it.events)
      if (e > 1) throw DimensionError("dataset item " + std::to_string(i) + " has a non-binary event");
  }
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  const std::size_t B = indices.size(), T = data.T, D = data.D, C = data.C;
  Batch b{Tensor({B, T, D}), Tensor({B, T}), Tensor({B, C})};
  for (std::size_t k = 0; k < B; ++k) {
    const Trajectory& tr = data.items.at(indices[k]);
    std::copy(tr.actions.data().begin(), tr.actions.data().end(), b.x1.data().begin() + k * T * D);
    for (std::size_t t = 0; t < T; ++t) b.events[k * T + t] = tr.events[t];
    std::copy(tr.context.begin(), tr.context.end(), b.context.data().begin() + k * C);
  }
  return b;
}

Batch make_batch(const Dataset& data) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return make_batch(data, all);
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  data.validate();
  std::string out(kMagic, kMagicLen);
  io::put_u64(out, data.size());
  io::put_u32(out, static_cast<std::uint32_t>(data.T));
  io::put_u32(out, static_cast<std::uint32_t>(data.D));
  io::put_u32(out, static_cast<std::uint32_t>(data.C));
  for (const auto& tr : data.items) {
    for (double v : tr.actions.data()) io::put_f64(out, v);
    for (auto e : tr.events) io::put_u8(out, e);
    for (double v : tr.context) io::put_f64(out, v);
  }
  io::write_file(path, out);
}

Dataset load_dataset(const std::filesystem::path& path) {
  io::Reader r(io::read_file(path));
  if (r.bytes(kMagicLen) != std::string(kMagic, kMagicLen)) throw FormatError(path.string() + ": not a KFDATA1 file");
  const std::uint64_t n = r.u64();
  Dataset data;
  data.T = r.u32();
  data.D = r.u32();
  data.C = r.u32();
  const std::size_t per_item = data.T * data.D * 8 + data.T + data.C * 8;
  if (per_item == 0 ? n != 0 : n > r.remaining() / per_item) throw FormatError(path.string() + ": truncated");
  data.items.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    Trajectory tr;
    std::vector<double> a(data.T * data.D);
    for (double& v : a) v = r.f64();
    try {
      tr.actions = Tensor({data.T, data.D}, std::move(a));
    } catch (const NumericError&) {
      throw FormatError(path.string() + ": non-finite action values");
    }
    tr.events.resize(data.T);
    for (auto& e : tr.events) e = r.u8();
    tr.context.resize(data.C);
    for (double& v : tr.context) v = r.f64();
    data.items.push_back(std::move(tr));
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes");
  try {
    data.validate();
  } catch (const DimensionError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return data;
}

}  // namespace kflow
