#pragma once

// Byte-level readers and writers with explicit endianness.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tvae/errors.hpp"

namespace tvae {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Writes through a temporary file and renames, so a crash mid-write leaves
// any previous file intact.
inline void write_file_bytes_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidArgument("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InvalidArgument("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void str(const std::string& s) { bytes(s.data(), s.size()); }

  template <typename U>
  void le(U v) { put(v, false); }
  template <typename U>
  void be(U v) { put(v, true); }
  void f32_le(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64_le(double v) { le(std::bit_cast<std::uint64_t>(v)); }

  const std::vector<std::uint8_t>& data() const { return buf_; }
  std::vector<std::uint8_t>& data() { return buf_; }

 private:
  template <typename U>
  void put(U v, bool big) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      const std::size_t shift = 8 * (big ? sizeof(U) - 1 - i : i);
      buf_.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> shift) & 0xFF));
    }
  }

  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& data, std::string source)
      : data_(data), source_(std::move(source)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& source() const { return source_; }

  void need(std::size_t n, const std::string& what) const {
    if (remaining() < n)
      throw ParseError(source_ + ": truncated " + what + " (need " + std::to_string(n) + " bytes, have " +
                           std::to_string(remaining()) + ")",
                       pos_);
  }

  std::string str(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  const std::uint8_t* take(std::size_t n, const std::string& what) {
    need(n, what);
    const std::uint8_t* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

  template <typename U>
  U le(const std::string& what) { return get<U>(what, false); }
  template <typename U>
  U be(const std::string& what) { return get<U>(what, true); }
  float f32_le(const std::string& what) { return std::bit_cast<float>(le<std::uint32_t>(what)); }
  double f64_le(const std::string& what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }

  [[noreturn]] void fail(const std::string& msg, std::size_t at) const { throw ParseError(source_ + ": " + msg, at); }

 private:
  template <typename U>
  U get(const std::string& what, bool big) {
    const std::uint8_t* p = take(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      const std::size_t shift = 8 * (big ? sizeof(U) - 1 - i : i);
      v |= static_cast<std::uint64_t>(p[i]) << shift;
    }
    return static_cast<U>(v);
  }

  const std::vector<std::uint8_t>& data_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace tvae
