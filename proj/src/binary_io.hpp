/* Copyright 2026 The DMSN Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Little-endian primitives shared by the tensor and checkpoint formats.

#ifndef DMSN_SRC_BINARY_IO_HPP_
#define DMSN_SRC_BINARY_IO_HPP_

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace dmsn::io {

template <typename U>
void put_le(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  os.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& is, const char* what) {
  static_assert(std::is_unsigned_v<U>);
  std::array<unsigned char, sizeof(U)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (is.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw std::runtime_error(std::string("truncated stream while reading ") +
                             what);
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(bytes[i]) << (8 * i);
  }
  return value;
}

inline void put_f32(std::ostream& os, float v) {
  put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
}
inline void put_f64(std::ostream& os, double v) {
  put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
}

inline void expect_magic(std::istream& is, const std::string& magic,
                         const char* what) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (is.gcount() != static_cast<std::streamsize>(magic.size()) ||
      got != magic) {
    throw std::runtime_error(std::string("bad magic bytes in ") + what +
                             " (expected \"" + magic + "\")");
  }
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_le<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, const char* what,
                              std::uint64_t limit = (1ULL << 32)) {
  const auto size = get_le<std::uint64_t>(is, what);
  if (size > limit) {
    throw std::runtime_error(std::string("implausible length for ") + what);
  }
  std::string s(size, '\0');
  is.read(s.data(), static_cast<std::streamsize>(size));
  if (is.gcount() != static_cast<std::streamsize>(size)) {
    throw std::runtime_error(std::string("truncated stream while reading ") +
                             what);
  }
  return s;
}

}  // namespace dmsn::io

#endif  // DMSN_SRC_BINARY_IO_HPP_
