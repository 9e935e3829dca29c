#pragma once

// Little-endian named-tensor container shared by the mesh-model (UVHM) and
// avatar-asset (UVGA) files.
//
//   magic      4 bytes
//   version    u32
//   count      u32
//   count x {
//     name_len u32, name bytes
//     dtype    u8   (0 = f32, 1 = u32, 2 = u8)
//     rank     u8
//     dims     u64 x rank
//     payload  element_count * sizeof(dtype) bytes, little-endian
//   }

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uvavatar/error.hpp"

namespace uvavatar {

enum class DType : std::uint8_t { F32 = 0, U32 = 1, U8 = 2 };

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32:
    case DType::U32:
      return 4;
    case DType::U8:
      return 1;
  }
  throw IoError("unknown tensor dtype");
}

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw IoError("tensor file truncated");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | s[static_cast<std::size_t>(i)];
    return v;
  }
  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | s[static_cast<std::size_t>(i)];
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

struct Tensor {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> payload;  // little-endian

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= static_cast<std::size_t>(d);
    return n;
  }

  /// Values are rounded to f32.
  static Tensor f32(std::string name, std::vector<std::uint64_t> dims, std::span<const double> values) {
    Tensor t{std::move(name), DType::F32, std::move(dims), {}};
    if (t.element_count() != values.size()) throw ConfigError("tensor " + t.name + ": dims do not match data");
    t.payload.reserve(values.size() * 4);
    for (double v : values) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      detail::put_u32(t.payload, bits);
    }
    return t;
  }

  static Tensor u32(std::string name, std::vector<std::uint64_t> dims, std::span<const std::uint32_t> values) {
    Tensor t{std::move(name), DType::U32, std::move(dims), {}};
    if (t.element_count() != values.size()) throw ConfigError("tensor " + t.name + ": dims do not match data");
    t.payload.reserve(values.size() * 4);
    for (auto v : values) detail::put_u32(t.payload, v);
    return t;
  }

  static Tensor u8(std::string name, std::vector<std::uint64_t> dims, std::span<const std::uint8_t> values) {
    Tensor t{std::move(name), DType::U8, std::move(dims), {values.begin(), values.end()}};
    if (t.element_count() != values.size()) throw ConfigError("tensor " + t.name + ": dims do not match data");
    return t;
  }

  std::vector<double> as_f64() const {
    require(DType::F32);
    std::vector<double> out(element_count());
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 3; b >= 0; --b) bits = (bits << 8) | payload[i * 4 + static_cast<std::size_t>(b)];
      out[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    return out;
  }

  std::vector<std::uint32_t> as_u32() const {
    require(DType::U32);
    std::vector<std::uint32_t> out(element_count());
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint32_t v = 0;
      for (int b = 3; b >= 0; --b) v = (v << 8) | payload[i * 4 + static_cast<std::size_t>(b)];
      out[i] = v;
    }
    return out;
  }

  const std::vector<std::uint8_t>& as_u8() const {
    require(DType::U8);
    return payload;
  }

 private:
  void require(DType t) const {
    if (dtype != t) throw IoError("tensor " + name + " has unexpected dtype");
  }
};

struct TensorFile {
  std::array<char, 4> magic{};
  std::uint32_t version = 1;
  std::vector<Tensor> tensors;

  const Tensor* find(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  const Tensor& get(std::string_view name) const {
    if (const auto* t = find(name)) return *t;
    throw IoError("tensor file is missing tensor '" + std::string(name) + "'");
  }

  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out(magic.begin(), magic.end());
    detail::put_u32(out, version);
    detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
      if (t.payload.size() != t.element_count() * dtype_size(t.dtype))
        throw ConfigError("tensor " + t.name + ": payload size mismatch");
      detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
      out.insert(out.end(), t.name.begin(), t.name.end());
      out.push_back(static_cast<std::uint8_t>(t.dtype));
      out.push_back(static_cast<std::uint8_t>(t.dims.size()));
      for (auto d : t.dims) detail::put_u64(out, d);
      out.insert(out.end(), t.payload.begin(), t.payload.end());
    }
    return out;
  }

  static TensorFile parse(std::span<const std::uint8_t> bytes, std::string_view expected_magic) {
    detail::ByteReader in(bytes);
    TensorFile f;
    auto m = in.take(4);
    std::memcpy(f.magic.data(), m.data(), 4);
    if (std::string_view(f.magic.data(), 4) != expected_magic)
      throw IoError("bad magic: expected " + std::string(expected_magic));
    f.version = in.u32();
    const std::uint32_t count = in.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      Tensor t;
      const auto name = in.take(in.u32());
      t.name.assign(name.begin(), name.end());
      const auto dtype = in.u8();
      if (dtype > 2) throw IoError("tensor " + t.name + ": unknown dtype " + std::to_string(dtype));
      t.dtype = static_cast<DType>(dtype);
      const auto rank = in.u8();
      for (int r = 0; r < rank; ++r) t.dims.push_back(in.u64());
      std::size_t n = 1;
      for (auto d : t.dims) {
        if (d != 0 && n > (std::size_t{1} << 40) / d) throw IoError("tensor " + t.name + ": dims too large");
        n *= static_cast<std::size_t>(d);
      }
      const auto payload = in.take(n * dtype_size(t.dtype));
      t.payload.assign(payload.begin(), payload.end());
      f.tensors.push_back(std::move(t));
    }
    if (!in.done()) throw IoError("trailing bytes after tensor file");
    return f;
  }
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

/// FNV-1a 64-bit, used for content references between files.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace uvavatar
