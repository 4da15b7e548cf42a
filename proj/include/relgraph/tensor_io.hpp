#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "relgraph/tensor.hpp"

namespace relgraph {

// Tensor file layout (all integers little-endian):
//   offset 0  magic "RGT1"
//   offset 4  dtype u8 (1 = float64)
//   offset 5  rank u8
//   offset 6  reserved u16 = 0
//   offset 8  rank × u64 dims
//   then      product(dims) × float64 payload, row-major
inline constexpr std::array<char, 4> kTensorMagic{'R', 'G', 'T', '1'};
inline constexpr std::array<char, 4> kBundleMagic{'R', 'G', 'B', '1'};
inline constexpr std::uint8_t kDtypeFloat64 = 1;

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(std::span<const std::uint8_t> in, std::size_t pos) {
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::make_unsigned_t<T>>(in[pos + i]) << (8 * i);
  return static_cast<T>(u);
}

inline void need(std::span<const std::uint8_t> in, std::size_t pos, std::size_t n, std::uint64_t base,
                 const char* what) {
  if (in.size() < pos + n)
    throw FormatError(std::string("truncated ") + what + ": need " + std::to_string(n) + " bytes, have " +
                          std::to_string(in.size() - std::min(in.size(), pos)),
                      base + std::min(in.size(), pos));
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace detail

inline std::string encode_tensor(const Tensor& t) {
  if (t.rank() == 0 || t.rank() > 255) throw ShapeError("encode_tensor: unsupported rank " + std::to_string(t.rank()));
  std::string out(kTensorMagic.begin(), kTensorMagic.end());
  detail::put_le<std::uint8_t>(out, kDtypeFloat64);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  detail::put_le<std::uint16_t>(out, 0);
  for (auto d : t.dims()) detail::put_le<std::uint64_t>(out, d);
  out.reserve(out.size() + 8 * t.size());
  for (double v : t.data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

/// Decode one tensor starting at in[0]. `base` is added to reported offsets.
/// When `exact` is set, trailing bytes are an error. Returns bytes consumed.
inline std::pair<Tensor, std::size_t> decode_tensor(std::span<const std::uint8_t> in, std::uint64_t base = 0,
                                                    bool exact = true) {
  detail::need(in, 0, 8, base, "tensor header");
  if (std::memcmp(in.data(), kTensorMagic.data(), 4) != 0) throw FormatError("bad tensor magic", base);
  if (in[4] != kDtypeFloat64)
    throw FormatError("unsupported dtype code " + std::to_string(in[4]) + ", expected 1 (float64)", base + 4);
  const std::size_t rank = in[5];
  if (rank == 0) throw FormatError("tensor rank must be >= 1", base + 5);
  if (detail::get_le<std::uint16_t>(in, 6) != 0) throw FormatError("reserved header field is not zero", base + 6);
  detail::need(in, 8, 8 * rank, base, "tensor dims");
  Dims dims(rank);
  std::uint64_t count = 1;
  for (std::size_t k = 0; k < rank; ++k) {
    const auto d = detail::get_le<std::uint64_t>(in, 8 + 8 * k);
    if (d == 0) throw FormatError("dimension " + std::to_string(k) + " is zero", base + 8 + 8 * k);
    if (count > (UINT64_MAX / 8) / d) throw FormatError("dimension product overflows", base + 8 + 8 * k);
    count *= d;
    dims[k] = static_cast<std::size_t>(d);
  }
  const std::size_t header = 8 + 8 * rank;
  const std::size_t payload = static_cast<std::size_t>(8 * count);
  const std::size_t available = in.size() - header;
  if (available < payload || (exact && available != payload))
    throw FormatError("payload has " + std::to_string(available) + " bytes but dims " + dims_to_string(dims) +
                          " require " + std::to_string(payload),
                      base + header);
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    data[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(in, header + 8 * i));
    if (!std::isfinite(data[i])) throw FormatError("non-finite value in payload", base + header + 8 * i);
  }
  return {Tensor(std::move(dims), std::move(data)), header + payload};
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  detail::write_file(path, encode_tensor(t));
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_tensor(bytes).first;
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
}

// ---------------------------------------------------------------------------
// Named tensor bundle (checkpoints):
//   "RGB1", u32 count, then per entry: u16 name length, name bytes,
//   u64 tensor byte length, tensor file bytes.

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline std::string encode_bundle(const NamedTensors& entries) {
  std::string out(kBundleMagic.begin(), kBundleMagic.end());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.size() > UINT16_MAX) throw ShapeError("bundle entry name too long");
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    const std::string body = encode_tensor(t);
    detail::put_le<std::uint64_t>(out, body.size());
    out += body;
  }
  return out;
}

inline NamedTensors decode_bundle(std::span<const std::uint8_t> in) {
  detail::need(in, 0, 8, 0, "bundle header");
  if (std::memcmp(in.data(), kBundleMagic.data(), 4) != 0) throw FormatError("bad bundle magic", 0);
  const auto count = detail::get_le<std::uint32_t>(in, 4);
  NamedTensors out;
  std::size_t pos = 8;
  for (std::uint32_t e = 0; e < count; ++e) {
    detail::need(in, pos, 2, 0, "bundle entry name length");
    const auto len = detail::get_le<std::uint16_t>(in, pos);
    pos += 2;
    detail::need(in, pos, len, 0, "bundle entry name");
    std::string name(reinterpret_cast<const char*>(in.data() + pos), len);
    pos += len;
    detail::need(in, pos, 8, 0, "bundle entry size");
    const auto size = detail::get_le<std::uint64_t>(in, pos);
    pos += 8;
    detail::need(in, pos, static_cast<std::size_t>(size), 0, "bundle entry body");
    auto [t, used] = decode_tensor(in.subspan(pos, static_cast<std::size_t>(size)), pos);
    pos += used;
    out.emplace_back(std::move(name), std::move(t));
  }
  if (pos != in.size()) throw FormatError("trailing bytes after last bundle entry", pos);
  return out;
}

inline void save_bundle(const std::filesystem::path& path, const NamedTensors& entries) {
  detail::write_file(path, encode_bundle(entries));
}

inline NamedTensors load_bundle(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_bundle(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
}

}  // namespace relgraph
