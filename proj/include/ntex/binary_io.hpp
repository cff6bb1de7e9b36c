#pragma once

// Little-endian primitives for the G-buffer and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>

#include "ntex/errors.hpp"

namespace ntex::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
  requires std::is_arithmetic_v<T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
  requires std::is_arithmetic_v<T>
void write_array(std::ostream& out, std::span<const T> values) {
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
}

template <typename T>
  requires std::is_arithmetic_v<T>
T read_pod(std::istream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw FormatError(std::string("truncated stream while reading ") + what);
  }
  return value;
}

template <typename T>
  requires std::is_arithmetic_v<T>
void read_array(std::istream& in, std::span<T> values, const char* what) {
  const auto bytes = static_cast<std::streamsize>(values.size_bytes());
  in.read(reinterpret_cast<char*>(values.data()), bytes);
  if (in.gcount() != bytes) throw FormatError(std::string("truncated stream while reading ") + what);
}

inline void write_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
  char buf[4] = {};
  in.read(buf, 4);
  if (in.gcount() != 4 || std::memcmp(buf, magic, 4) != 0) {
    throw FormatError(std::string("bad magic, expected \"") + magic + "\"");
  }
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const char* what, std::uint32_t max_len = 1u << 24) {
  const auto len = read_pod<std::uint32_t>(in, what);
  if (len > max_len) throw FormatError(std::string("implausible length for ") + what);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (in.gcount() != static_cast<std::streamsize>(len)) {
    throw FormatError(std::string("truncated stream while reading ") + what);
  }
  return s;
}

}  // namespace ntex::io
