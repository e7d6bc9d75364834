#pragma once

// Event-conditioned trajectories and their "KFDATA1" file format:
//   magic "KFDATA1", u64 count, u32 T, u32 D, u32 C, then per trajectory
//   f64 actions[T·D], u8 events[T], f64 context[C] (little-endian).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "kflow/tensor.hpp"

namespace kflow {

struct Trajectory {
  Tensor actions;                    // [T×D]
  std::vector<std::uint8_t> events;  // T markers, 0 or 1
  std::vector<double> context;       // C values

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct Dataset {
  std::size_t T = 0, D = 0, C = 0;
  std::vector<Trajectory> items;

  std::size_t size() const { return items.size(); }
  // Throws DimensionError if an item disagrees with T/D/C or has events
  // other than 0/1.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Stacked tensors for a set of trajectory indices.
struct Batch {
  Tensor x1;       // [B×T×D]
  Tensor events;   // [B×T]
  Tensor context;  // [B×C]

  std::size_t size() const { return x1.dim(0); }
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);
Batch make_batch(const Dataset& data);  // every trajectory, in order

void save_dataset(const std::filesystem::path& path, const Dataset& data);
// Throws FormatError on a bad magic or truncated file; nothing is returned
// on failure.
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace kflow
