#pragma once

// IDX files (the MNIST distribution format) and the stack container.
//
// IDX: big-endian. Bytes 0-1 are zero, byte 2 is the element type
// (0x08 u8, 0x09 i8, 0x0B i16, 0x0C i32, 0x0D f32, 0x0E f64), byte 3 the
// rank, followed by rank x u32 dimensions and the payload.
//
// Stack container, little-endian throughout:
//   4 bytes  magic "TVST"
//   u32      element type (same codes as IDX)
//   u32      rank
//   u64      dimensions, rank of them
//   payload  row-major

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tvae/binary_io.hpp"

namespace tvae::data {

enum class DType : std::uint8_t { U8 = 0x08, I8 = 0x09, I16 = 0x0B, I32 = 0x0C, F32 = 0x0D, F64 = 0x0E };

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::U8:
    case DType::I8: return 1;
    case DType::I16: return 2;
    case DType::I32:
    case DType::F32: return 4;
    case DType::F64: return 8;
  }
  return 0;
}

inline bool valid_dtype(std::uint32_t code) {
  return code == 0x08 || code == 0x09 || code == 0x0B || code == 0x0C || code == 0x0D || code == 0x0E;
}

// An n-d array held as doubles, remembering the on-disk element type.
struct NdArray {
  DType dtype = DType::U8;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;

  std::uint64_t count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline double read_element(ByteReader& r, DType t, bool big) {
  auto u = [&](auto tag) {
    using U = decltype(tag);
    return big ? r.be<U>("payload") : r.le<U>("payload");
  };
  switch (t) {
    case DType::U8: return u(std::uint8_t{});
    case DType::I8: return static_cast<std::int8_t>(u(std::uint8_t{}));
    case DType::I16: return static_cast<std::int16_t>(u(std::uint16_t{}));
    case DType::I32: return static_cast<std::int32_t>(u(std::uint32_t{}));
    case DType::F32: return std::bit_cast<float>(u(std::uint32_t{}));
    case DType::F64: return std::bit_cast<double>(u(std::uint64_t{}));
  }
  return 0.0;
}

inline void write_element(ByteWriter& w, DType t, double v, bool big) {
  auto put = [&](auto x) {
    if (big) w.be(x);
    else w.le(x);
  };
  switch (t) {
    case DType::U8: put(static_cast<std::uint8_t>(v)); break;
    case DType::I8: put(static_cast<std::uint8_t>(static_cast<std::int8_t>(v))); break;
    case DType::I16: put(static_cast<std::uint16_t>(static_cast<std::int16_t>(v))); break;
    case DType::I32: put(static_cast<std::uint32_t>(static_cast<std::int32_t>(v))); break;
    case DType::F32: put(std::bit_cast<std::uint32_t>(static_cast<float>(v))); break;
    case DType::F64: put(std::bit_cast<std::uint64_t>(v)); break;
  }
}

inline void read_payload(ByteReader& r, NdArray& a, bool big) {
  const std::uint64_t n = a.count();
  r.need(n * dtype_size(a.dtype), "payload");
  a.values.resize(n);
  for (auto& v : a.values) v = read_element(r, a.dtype, big);
  if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes after payload", r.offset());
}

}  // namespace detail

inline NdArray parse_idx(const std::vector<std::uint8_t>& bytes, const std::string& source = "<idx>") {
  ByteReader r(bytes, source);
  const auto zero = r.be<std::uint16_t>("magic");
  const auto code = r.be<std::uint8_t>("magic");
  const auto rank = r.be<std::uint8_t>("magic");
  if (zero != 0 || !valid_dtype(code)) r.fail("bad IDX magic", 0);
  NdArray a;
  a.dtype = static_cast<DType>(code);
  for (int i = 0; i < rank; ++i) a.dims.push_back(r.be<std::uint32_t>("dimension"));
  detail::read_payload(r, a, true);
  return a;
}

inline NdArray read_idx(const std::string& path) { return parse_idx(read_file_bytes(path), path); }

inline std::vector<std::uint8_t> serialize_idx(const NdArray& a) {
  ByteWriter w;
  w.be<std::uint16_t>(0);
  w.be<std::uint8_t>(static_cast<std::uint8_t>(a.dtype));
  w.be<std::uint8_t>(static_cast<std::uint8_t>(a.dims.size()));
  for (auto d : a.dims) w.be<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (double v : a.values) detail::write_element(w, a.dtype, v, true);
  return std::move(w.data());
}

inline void write_idx(const std::string& path, const NdArray& a) { write_file_bytes_atomic(path, serialize_idx(a)); }

inline constexpr char kStackMagic[] = "TVST";

inline NdArray parse_stack(const std::vector<std::uint8_t>& bytes, const std::string& source = "<stack>") {
  ByteReader r(bytes, source);
  if (r.str(4, "magic") != std::string(kStackMagic, 4)) r.fail("bad stack magic", 0);
  const std::size_t code_at = r.offset();
  const auto code = r.le<std::uint32_t>("element type");
  if (!valid_dtype(code)) r.fail("unknown element type " + std::to_string(code), code_at);
  const auto rank = r.le<std::uint32_t>("rank");
  NdArray a;
  a.dtype = static_cast<DType>(code);
  for (std::uint32_t i = 0; i < rank; ++i) a.dims.push_back(r.le<std::uint64_t>("dimension"));
  detail::read_payload(r, a, false);
  return a;
}

inline NdArray read_stack(const std::string& path) { return parse_stack(read_file_bytes(path), path); }

inline std::vector<std::uint8_t> serialize_stack(const NdArray& a) {
  ByteWriter w;
  w.bytes(kStackMagic, 4);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(a.dtype));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(a.dims.size()));
  for (auto d : a.dims) w.le<std::uint64_t>(d);
  for (double v : a.values) detail::write_element(w, a.dtype, v, false);
  return std::move(w.data());
}

inline void write_stack(const std::string& path, const NdArray& a) {
  write_file_bytes_atomic(path, serialize_stack(a));
}

}  // namespace tvae::data
