// Copyright 2026 The Popcorn Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "popcorn/bytes.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "popcorn/error.hpp"

namespace popcorn {

const char* to_string(AbortReason reason) {
  switch (reason) {
    case AbortReason::kUnspecified: return "unspecified";
    case AbortReason::kProtocolOrder: return "protocol-order";
    case AbortReason::kMalformedFrame: return "malformed-frame";
    case AbortReason::kBoundOverflow: return "bound-overflow";
    case AbortReason::kVersionMismatch: return "version-mismatch";
    case AbortReason::kShapeMismatch: return "shape-mismatch";
    case AbortReason::kConnectionLost: return "connection-lost";
    case AbortReason::kPeerAbort: return "peer-abort";
  }
  return "unknown";
}

void ByteWriter::u16(std::uint16_t v) {
  buf_.push_back(static_cast<std::uint8_t>(v >> 8));
  buf_.push_back(static_cast<std::uint8_t>(v));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) {
    buf_.push_back(static_cast<std::uint8_t>(v >> shift));
  }
}

void ByteWriter::u16_le(std::uint16_t v) {
  buf_.push_back(static_cast<std::uint8_t>(v));
  buf_.push_back(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::u32_le(std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) {
    buf_.push_back(static_cast<std::uint8_t>(v >> shift));
  }
}

void ByteWriter::i64_le(std::int64_t v) {
  auto u = static_cast<std::uint64_t>(v);
  for (int shift = 0; shift < 64; shift += 8) {
    buf_.push_back(static_cast<std::uint8_t>(u >> shift));
  }
}

void ByteWriter::f64_le(double v) {
  i64_le(static_cast<std::int64_t>(std::bit_cast<std::uint64_t>(v)));
}

void ByteWriter::raw(std::span<const std::uint8_t> data) {
  buf_.insert(buf_.end(), data.begin(), data.end());
}

void ByteWriter::raw(const std::string& s) {
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::blob(std::span<const std::uint8_t> data) {
  u32(static_cast<std::uint32_t>(data.size()));
  raw(data);
}

void ByteWriter::mpz(const mpz_class& v) { blob(mpz_to_bytes(v)); }

void ByteWriter::mpz_fixed(const mpz_class& v, std::size_t width) {
  blob(mpz_to_bytes_fixed(v, width));
}

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
  if (n > remaining()) {
    throw FormatError("truncated input: need " + std::to_string(n) +
                      " bytes, have " + std::to_string(remaining()));
  }
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t ByteReader::u8() { return raw(1)[0]; }

std::uint16_t ByteReader::u16() {
  auto b = raw(2);
  return static_cast<std::uint16_t>((b[0] << 8) | b[1]);
}

std::uint32_t ByteReader::u32() {
  auto b = raw(4);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

std::uint16_t ByteReader::u16_le() {
  auto b = raw(2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t ByteReader::u32_le() {
  auto b = raw(4);
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) |
         (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

std::int64_t ByteReader::i64_le() {
  auto b = raw(8);
  std::uint64_t u = 0;
  for (int i = 7; i >= 0; --i) u = (u << 8) | b[static_cast<std::size_t>(i)];
  return static_cast<std::int64_t>(u);
}

double ByteReader::f64_le() {
  return std::bit_cast<double>(static_cast<std::uint64_t>(i64_le()));
}

std::span<const std::uint8_t> ByteReader::blob() { return raw(u32()); }

mpz_class ByteReader::mpz() { return mpz_from_bytes(blob()); }

void ByteReader::expect_done(const char* what) const {
  if (!done()) {
    throw FormatError(std::string(what) + ": " + std::to_string(remaining()) +
                      " trailing bytes");
  }
}

Bytes mpz_to_bytes(const mpz_class& v) {
  if (sgn(v) < 0) throw DomainError("cannot serialize a negative integer");
  if (sgn(v) == 0) return {};
  std::size_t count = (mpz_sizeinbase(v.get_mpz_t(), 2) + 7) / 8;
  Bytes out(count);
  std::size_t written = 0;
  mpz_export(out.data(), &written, 1, 1, 1, 0, v.get_mpz_t());
  out.resize(written);
  return out;
}

Bytes mpz_to_bytes_fixed(const mpz_class& v, std::size_t width) {
  Bytes minimal = mpz_to_bytes(v);
  if (minimal.size() > width) {
    throw DomainError("integer does not fit in " + std::to_string(width) +
                      " bytes");
  }
  Bytes out(width - minimal.size(), 0);
  out.insert(out.end(), minimal.begin(), minimal.end());
  return out;
}

mpz_class mpz_from_bytes(std::span<const std::uint8_t> data) {
  mpz_class v;
  if (!data.empty()) {
    mpz_import(v.get_mpz_t(), data.size(), 1, 1, 1, 0, data.data());
  }
  return v;
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in),
               std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("short write to " + path);
}

std::string to_hex(std::span<const std::uint8_t> data) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (auto b : data) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

}  // namespace popcorn
