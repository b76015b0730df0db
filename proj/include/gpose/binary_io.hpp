#pragma once

// Little-endian primitive readers/writers with byte-offset tracking, shared by
// the GPFG, GPWT, GPDP and GPST formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "gpose/error.hpp"

namespace gpose::io {

template <typename T>
T byteswap_if_needed(T v) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b.data(), sizeof(T));
  }
  return v;
}

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    v = byteswap_if_needed(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    written_ += sizeof(T);
  }
  void put_bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    written_ += n;
  }
  void put_magic(std::string_view magic) { put_bytes(magic.data(), magic.size()); }
  void put_f32_array(const float* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      put_bytes(data, n * sizeof(float));
    } else {
      for (std::size_t i = 0; i < n; ++i) put(data[i]);
    }
  }
  std::uint64_t written() const { return written_; }
  void check() const {
    if (!out_) throw Error(ErrorCode::kIo, "write failed");
  }

 private:
  std::ostream& out_;
  std::uint64_t written_ = 0;
};

class Reader {
 public:
  explicit Reader(std::istream& in, std::uint64_t base_offset = 0) : in_(in), offset_(base_offset) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get(const char* what) {
    T v;
    read_raw(&v, sizeof(T), what);
    return byteswap_if_needed(v);
  }
  void read_raw(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got != n) throw FormatError(ErrorCode::kTruncated, offset_ + got, std::string("truncated while reading ") + what);
    offset_ += n;
  }
  void expect_magic(std::string_view magic) {
    std::array<char, 8> buf{};
    const std::uint64_t at = offset_;
    read_raw(buf.data(), magic.size(), "magic");
    if (std::string_view(buf.data(), magic.size()) != magic)
      throw FormatError(ErrorCode::kFormat, at, "bad magic, expected " + std::string(magic));
  }
  void get_f32_array(float* dst, std::size_t n, const char* what) {
    read_raw(dst, n * sizeof(float), what);
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < n; ++i) dst[i] = byteswap_if_needed(dst[i]);
    }
  }
  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_;
};

}  // namespace gpose::io
