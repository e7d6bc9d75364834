#pragma once

// "KFLOW1" container: named float64 tensors and text blocks.
//
// Layout (little-endian):
//   magic "KFLOW1"
//   u32 entry count
//   per entry: u32 name length, name bytes, u8 kind
//     kind 0 (tensor): u32 rank, u64 dims[rank], f64 data[numel]
//     kind 1 (text):   u64 length, bytes

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "kflow/tensor.hpp"

namespace kflow {

struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> texts;

  const Tensor& tensor(const std::string& name) const;
  const std::string& text(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws FormatError on a bad magic, unknown kind, or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);

namespace io {

// Little-endian primitives shared by the binary formats.
void put_u8(std::string& out, std::uint8_t v);
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f64(std::string& out, double v);

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string bytes(std::size_t n);
  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const char* take(std::size_t n);
  std::string bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary file and rename so a failed write leaves no partial file.
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace io
}  // namespace kflow
