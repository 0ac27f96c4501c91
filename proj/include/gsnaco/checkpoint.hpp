#pragma once

// Binary archives for parameters and raw tensors.
//
// Checkpoint layout (all integers little-endian):
//   "GSNACKPT"            8-byte magic
//   u32 version           currently 1
//   u64 entry count
//   per entry: u32 name length, name bytes, u32 rank, u64 dims[rank],
//              f64 values[prod(dims)]
//
// Raw tensor layout: "GSNATNSR", u32 version, u8 dtype (4 = f32, 8 = f64),
// u32 rank, u64 dims[rank], values.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "gsnaco/nn.hpp"

namespace gsnaco {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io {

inline constexpr char kCheckpointMagic[8] = {'G', 'S', 'N', 'A', 'C', 'K', 'P', 'T'};
inline constexpr char kTensorMagic[8] = {'G', 'S', 'N', 'A', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class U>
void put_le(std::ostream& os, U v) {
  static_assert(std::is_integral_v<U>);
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <class U>
U get_le(std::istream& is) {
  unsigned char b[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(U))) throw FormatError("unexpected end of archive");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<U>(v);
}

inline void put_f64(std::ostream& os, double d) { put_le(os, std::bit_cast<std::uint64_t>(d)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_le<std::uint64_t>(is)); }
inline void put_f32(std::ostream& os, float f) { put_le(os, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32(std::istream& is) { return std::bit_cast<float>(get_le<std::uint32_t>(is)); }

inline void expect_magic(std::istream& is, const char (&magic)[8], const std::string& what) {
  char m[8];
  if (!is.read(m, 8) || std::memcmp(m, magic, 8) != 0) throw FormatError(what + ": bad magic header");
}

inline Shape read_shape(std::istream& is) {
  const auto rank = get_le<std::uint32_t>(is);
  if (rank > 16) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape s(rank);
  for (auto& d : s) d = static_cast<std::size_t>(get_le<std::uint64_t>(is));
  return s;
}

inline void write_shape(std::ostream& os, const Shape& s) {
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  for (auto d : s) put_le<std::uint64_t>(os, d);
}

}  // namespace io

struct ArchivedTensor {
  Shape shape;
  std::vector<double> values;
  bool operator==(const ArchivedTensor&) const = default;
};

/// Name-ordered parameter archive.
using Archive = std::map<std::string, ArchivedTensor>;

inline void write_archive(std::ostream& os, const Archive& archive) {
  os.write(io::kCheckpointMagic, 8);
  io::put_le<std::uint32_t>(os, io::kCheckpointVersion);
  io::put_le<std::uint64_t>(os, archive.size());
  for (const auto& [name, t] : archive) {
    if (numel_of(t.shape) != t.values.size()) throw FormatError("archive entry " + name + ": shape/payload mismatch");
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::write_shape(os, t.shape);
    for (double v : t.values) io::put_f64(os, v);
  }
}

inline Archive read_archive(std::istream& is) {
  io::expect_magic(is, io::kCheckpointMagic, "checkpoint");
  const auto version = io::get_le<std::uint32_t>(is);
  if (version != io::kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = io::get_le<std::uint64_t>(is);
  Archive a;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = io::get_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("checkpoint: truncated name");
    ArchivedTensor t;
    t.shape = io::read_shape(is);
    t.values.resize(numel_of(t.shape));
    for (auto& v : t.values) v = io::get_f64(is);
    if (!a.emplace(std::move(name), std::move(t)).second) throw FormatError("checkpoint: duplicate entry");
  }
  return a;
}

template <class T>
Archive to_archive(const ParameterSet<T>& ps) {
  Archive a;
  for (const auto& p : ps.items()) {
    ArchivedTensor t{p.value.shape(), {}};
    t.values.assign(p.value.values().begin(), p.value.values().end());
    a.emplace(p.name, std::move(t));
  }
  return a;
}

/// Copies archived values into the parameters in place. Names and shapes must
/// match exactly.
template <class T>
void load_archive(const Archive& a, ParameterSet<T>& ps) {
  if (a.size() != ps.size()) {
    throw FormatError("checkpoint holds " + std::to_string(a.size()) + " tensors, model has " +
                      std::to_string(ps.size()));
  }
  for (auto& p : ps.items()) {
    auto it = a.find(p.name);
    if (it == a.end()) throw FormatError("checkpoint lacks parameter " + p.name);
    if (it->second.shape != p.value.shape()) {
      throw FormatError("checkpoint parameter " + p.name + " has shape " + to_string(it->second.shape) +
                        ", model expects " + to_string(p.value.shape()));
    }
    auto dst = p.value.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second.values[i]);
  }
}

template <class T>
void save_checkpoint(const std::string& path, const ParameterSet<T>& ps) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_archive(os, to_archive(ps));
  if (!os) throw std::runtime_error("failed writing " + path);
}

template <class T>
void load_checkpoint(const std::string& path, ParameterSet<T>& ps) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  load_archive(read_archive(is), ps);
}

/// Writes a raw tensor file with a float32 payload.
inline void write_tensor_f32(std::ostream& os, const Shape& shape, std::span<const float> values) {
  os.write(io::kTensorMagic, 8);
  io::put_le<std::uint32_t>(os, 1);
  io::put_le<std::uint8_t>(os, 4);
  io::write_shape(os, shape);
  for (float v : values) io::put_f32(os, v);
}

inline std::pair<Shape, std::vector<float>> read_tensor_f32(std::istream& is) {
  io::expect_magic(is, io::kTensorMagic, "tensor file");
  if (io::get_le<std::uint32_t>(is) != 1) throw FormatError("tensor file: unsupported version");
  const auto dtype = io::get_le<std::uint8_t>(is);
  Shape s = io::read_shape(is);
  std::vector<float> v(numel_of(s));
  if (dtype == 4) {
    for (auto& x : v) x = io::get_f32(is);
  } else if (dtype == 8) {
    for (auto& x : v) x = static_cast<float>(io::get_f64(is));
  } else {
    throw FormatError("tensor file: unknown dtype code " + std::to_string(dtype));
  }
  return {std::move(s), std::move(v)};
}

}  // namespace gsnaco
