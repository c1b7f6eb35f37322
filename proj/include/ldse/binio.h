// Copyright 2026  The ldse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef LDSE_BINIO_H_
#define LDSE_BINIO_H_

// Little-endian primitives shared by the checkpoint and feature formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "ldse/errors.h"

namespace ldse::binio {

inline void WriteU32(std::ostream &os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char *>(b), 4);
}

inline void WriteU64(std::ostream &os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char *>(b), 8);
}

inline void WriteF64(std::ostream &os, double v) { WriteU64(os, std::bit_cast<std::uint64_t>(v)); }

inline void WriteString(std::ostream &os, const std::string &s) {
  WriteU32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// Readers throw ParseError on truncation; `what` names the field.
inline std::uint32_t ReadU32(std::istream &is, const char *what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char *>(b), 4))
    throw ParseError(std::string("truncated input reading ") + what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t ReadU64(std::istream &is, const char *what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char *>(b), 8))
    throw ParseError(std::string("truncated input reading ") + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double ReadF64(std::istream &is, const char *what) {
  return std::bit_cast<double>(ReadU64(is, what));
}

inline std::string ReadString(std::istream &is, const char *what, std::uint32_t max_len = 1u << 24) {
  const std::uint32_t n = ReadU32(is, what);
  if (n > max_len) throw ParseError(std::string("implausible length for ") + what);
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), n)) throw ParseError(std::string("truncated input reading ") + what);
  return s;
}

}  // namespace ldse::binio

#endif  // LDSE_BINIO_H_
