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

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <gmpxx.h>

namespace popcorn {

using Bytes = std::vector<std::uint8_t>;

/// Appends fixed-width integers and blobs to a byte buffer. Big-endian is the
/// default; the *_le variants exist for the tensor and model payloads.
class ByteWriter {
 public:
  ByteWriter() = default;
  explicit ByteWriter(Bytes initial) : buf_(std::move(initial)) {}

  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void i16(std::int16_t v) { u16(static_cast<std::uint16_t>(v)); }
  void u16_le(std::uint16_t v);
  void u32_le(std::uint32_t v);
  void i64_le(std::int64_t v);
  void f64_le(double v);
  void raw(std::span<const std::uint8_t> data);
  void raw(const std::string& s);
  /// u32 big-endian length followed by the bytes.
  void blob(std::span<const std::uint8_t> data);
  /// Minimal-length big-endian magnitude of a non-negative integer, as a blob.
  void mpz(const mpz_class& v);
  /// Big-endian magnitude left-padded to exactly `width` bytes, as a blob.
  void mpz_fixed(const mpz_class& v, std::size_t width);

  const Bytes& bytes() const& { return buf_; }
  Bytes take() && { return std::move(buf_); }
  std::size_t size() const { return buf_.size(); }

 private:
  Bytes buf_;
};

/// Bounds-checked reader over a byte span; throws FormatError on underrun.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
  std::uint16_t u16_le();
  std::uint32_t u32_le();
  std::int64_t i64_le();
  double f64_le();
  std::span<const std::uint8_t> raw(std::size_t n);
  std::span<const std::uint8_t> blob();
  mpz_class mpz();

  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }
  /// Throws FormatError unless every byte has been consumed.
  void expect_done(const char* what) const;

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

Bytes mpz_to_bytes(const mpz_class& v);
Bytes mpz_to_bytes_fixed(const mpz_class& v, std::size_t width);
mpz_class mpz_from_bytes(std::span<const std::uint8_t> data);

Bytes read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> data);

std::string to_hex(std::span<const std::uint8_t> data);

}  // namespace popcorn
