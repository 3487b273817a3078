#pragma once

// Little-endian fixed-width helpers shared by the checkpoint and index files.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "treerank/errors.hpp"

namespace treerank::binio {

template <typename U>
void write_le(std::ostream& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
  }
  out.write(bytes, sizeof(U));
}

template <typename U>
U read_le(std::istream& in) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char bytes[sizeof(U)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(U));
  if (!in) throw FormatError("unexpected end of file");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(bytes[i]) << (8 * i);
  }
  return value;
}

inline void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }
inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_le<std::uint64_t>(in)); }

inline void write_string(std::ostream& out, const std::string& s) {
  write_le(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, std::uint32_t max_len = 1u << 16) {
  const auto len = read_le<std::uint32_t>(in);
  if (len > max_len) throw FormatError("string length " + std::to_string(len) + " exceeds limit");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw FormatError("unexpected end of file");
  return s;
}

}  // namespace treerank::binio
