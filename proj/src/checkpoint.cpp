#include "kflow/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "kflow/error.hpp"

namespace kflow {
namespace {

constexpr char kMagic[] = "KFLOW1";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw FormatError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

const std::string& Checkpoint::text(const std::string& name) const {
  auto it = texts.find(name);
  if (it == texts.end()) throw FormatError("checkpoint has no text block '" + name + "'");
  return it->second;
}

namespace io {

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

const char* Reader::take(std::size_t n) {
  if (bytes_.size() - pos_ < n) throw FormatError("unexpected end of file");
  const char* p = bytes_.data() + pos_;
  pos_ += n;
  return p;
}

std::uint8_t Reader::u8() { return static_cast<std::uint8_t>(*take(1)); }

std::uint32_t Reader::u32() {
  const auto* p = reinterpret_cast<const unsigned char*>(take(4));
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t Reader::u64() {
  const auto* p = reinterpret_cast<const unsigned char*>(take(8));
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::bytes(std::size_t n) { return std::string(take(n), n); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace io

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string out(kMagic, kMagicLen);
  io::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size() + ckpt.texts.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    io::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    io::put_u8(out, 0);
    io::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) io::put_u64(out, d);
    for (double v : t.data()) io::put_f64(out, v);
  }
  for (const auto& [name, text] : ckpt.texts) {
    io::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    io::put_u8(out, 1);
    io::put_u64(out, text.size());
    out += text;
  }
  io::write_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  io::Reader r(io::read_file(path));
  if (r.bytes(kMagicLen) != std::string(kMagic, kMagicLen)) throw FormatError(path.string() + ": not a KFLOW1 file");
  Checkpoint ckpt;
  const std::uint32_t count = r.u32();
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name = r.bytes(r.u32());
    const std::uint8_t kind = r.u8();
    if (kind == 0) {
      const std::uint32_t rank = r.u32();
      if (rank > 16) throw FormatError(path.string() + ": implausible rank for '" + name + "'");
      Shape shape(rank);
      for (auto& d : shape) d = r.u64();
      const std::size_t n = numel(shape);
      if (n > r.remaining() / 8) throw FormatError(path.string() + ": truncated tensor '" + name + "'");
      std::vector<double> data(n);
      for (auto& v : data) v = r.f64();
      ckpt.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    } else if (kind == 1) {
      const std::uint64_t len = r.u64();
      ckpt.texts.emplace(std::move(name), r.bytes(len));
    } else {
      throw FormatError(path.string() + ": unknown entry kind " + std::to_string(kind));
    }
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after last entry");
  return ckpt;
}

}  // namespace kflow
