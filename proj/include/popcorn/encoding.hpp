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
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <gmpxx.h>

#include "popcorn/bytes.hpp"
#include "popcorn/paillier.hpp"
#include "popcorn/random.hpp"

namespace popcorn {

/// Maps signed integers into Z_n (negatives wrap to n + x) and certifies that
/// products of a plaintext and a blinding factor never wrap:
/// plain_bound * blind_bound < n / 2.
class SignedCodec {
 public:
  static mpz_class default_plain_bound();  // 2^96
  static mpz_class default_blind_bound();  // 2^64

  /// Throws ConfigError if a bound is < 1 or the product bound is violated.
  SignedCodec(const mpz_class& n, mpz_class plain_bound, mpz_class blind_bound);
  explicit SignedCodec(const PublicKey& pk)
      : SignedCodec(pk.n(), default_plain_bound(), default_blind_bound()) {}

  const mpz_class& n() const { return n_; }
  const mpz_class& half_n() const { return half_n_; }
  const mpz_class& plain_bound() const { return plain_bound_; }
  const mpz_class& blind_bound() const { return blind_bound_; }

  /// Throws OverflowError when |x| > plain_bound.
  mpz_class encode(const mpz_class& x) const;
  mpz_class encode(std::int64_t x) const;
  /// r <= floor(n/2) decodes to r, otherwise to r - n.
  mpz_class decode(const mpz_class& r) const;
  std::int64_t decode_i64(const mpz_class& r) const;

  /// Throws OverflowError when |x| > plain_bound.
  void check_plain(const mpz_class& magnitude, const char* what) const;

 private:
  mpz_class n_;
  mpz_class half_n_;
  mpz_class plain_bound_;
  mpz_class blind_bound_;
};

mpz_class encode_signed(const mpz_class& x, const SignedCodec& codec);
mpz_class decode_signed(const mpz_class& r, const SignedCodec& codec);

inline constexpr std::int64_t kMaxFixed = std::int64_t{1} << 62;

/// Round-half-away-from-zero of x * 2^scale_exp. Throws OverflowError when the
/// magnitude exceeds `bound`.
std::int64_t quantize_fixed(double x, int scale_exp,
                            std::int64_t bound = kMaxFixed);
double dequantize(std::int64_t v, int scale_exp);

/// Dimensions in storage order. Rank-3 tensors are (height, width, channels),
/// flattened row-major so the channel index varies fastest.
struct Shape {
  std::vector<std::size_t> dims;

  std::size_t size() const;
  std::size_t rank() const { return dims.size(); }
  std::size_t height() const;
  std::size_t width() const;
  std::size_t channels() const;
  std::string str() const;

  static Shape hwc(std::size_t h, std::size_t w, std::size_t c) { return Shape{{h, w, c}}; }
  static Shape flat(std::size_t len) { return Shape{{len}}; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::size_t hwc_index(const Shape& s, std::size_t y, std::size_t x,
                             std::size_t c) {
  return (y * s.width() + x) * s.channels() + c;
}

/// Signed integers at fixed-point scale 2^scale_exp.
struct PlainTensor {
  Shape shape;
  int scale_exp = 0;
  std::vector<std::int64_t> values;

  /// max |value|, at least 1.
  mpz_class magnitude() const;
  friend bool operator==(const PlainTensor&, const PlainTensor&) = default;
};

/// Element-wise Paillier encryption of a PlainTensor, with the certified
/// bound on the magnitude of every encrypted integer.
struct EncTensor {
  Shape shape;
  int scale_exp = 0;
  mpz_class bound = 1;
  std::vector<Ciphertext> cells;
};

PlainTensor make_plain(Shape shape, int scale_exp, std::vector<std::int64_t> values);

EncTensor encrypt_tensor(const PlainTensor& t, const PublicKey& pk,
                         const SignedCodec& codec, Prg& prg);
PlainTensor decrypt_tensor(const EncTensor& t, const KeyPair& keys,
                           const SignedCodec& codec);

/// Quantizes real values at 2^scale_exp into a tensor.
PlainTensor quantize_tensor(Shape shape, std::span<const double> values,
                            int scale_exp);
std::vector<double> dequantize_tensor(const PlainTensor& t);

// PPTN file: "PPTN", u16 version, u8 rank, u32 dims[rank] (big-endian),
// i16 scale_exp, then little-endian i64 values.
inline constexpr std::uint16_t kTensorFileVersion = 1;
Bytes serialize_tensor(const PlainTensor& t);
PlainTensor parse_tensor(std::span<const std::uint8_t> data);

}  // namespace popcorn
