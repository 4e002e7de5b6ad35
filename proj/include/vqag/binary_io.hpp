#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "vqag/errors.hpp"

namespace vqag::binio {

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

// Little-endian scalar write/read. Readers throw ParseError with the stream
// offset when the stream ends early.
template <typename T>
void write_le(std::ostream& os, T v) {
  v = byteswap_if_big(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const std::string& what) {
  const auto offset = static_cast<long long>(is.tellg());
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ParseError("truncated " + what + " at byte offset " + std::to_string(offset));
  return byteswap_if_big(v);
}

template <typename T>
void write_array_le(std::ostream& os, const T* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
  } else {
    for (std::size_t i = 0; i < n; ++i) write_le(os, data[i]);
  }
}

template <typename T>
void read_array_le(std::istream& is, T* data, std::size_t n, const std::string& what) {
  const auto offset = static_cast<long long>(is.tellg());
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
  if (!is) throw ParseError("truncated " + what + " at byte offset " + std::to_string(offset));
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < n; ++i) data[i] = byteswap_if_big(data[i]);
  }
}

}  // namespace vqag::binio
