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

#include "popcorn/encoding.hpp"

#include <cmath>
#include <sstream>

#include "popcorn/error.hpp"
#include "popcorn/parallel.hpp"

namespace popcorn {

mpz_class SignedCodec::default_plain_bound() {
  mpz_class b = 1;
  b <<= 96;
  return b;
}

mpz_class SignedCodec::default_blind_bound() {
  mpz_class b = 1;
  b <<= 64;
  return b;
}

SignedCodec::SignedCodec(const mpz_class& n, mpz_class plain_bound,
                         mpz_class blind_bound)
    : n_(n),
      half_n_(n / 2),
      plain_bound_(std::move(plain_bound)),
      blind_bound_(std::move(blind_bound)) {
  if (plain_bound_ < 1 || blind_bound_ < 1) {
    throw ConfigError("codec bounds must be >= 1");
  }
  // plain * blind < n / 2, checked without fractions: 2 * plain * blind < n.
  if (2 * plain_bound_ * blind_bound_ >= n_) {
    throw ConfigError("modulus too small for plain_bound * blind_bound < n/2");
  }
}

void SignedCodec::check_plain(const mpz_class& magnitude, const char* what) const {
  if (abs(magnitude) > plain_bound_) {
    throw OverflowError(std::string(what) + ": magnitude exceeds plaintext bound");
  }
}

mpz_class SignedCodec::encode(const mpz_class& x) const {
  check_plain(x, "encode_signed");
  return sgn(x) < 0 ? mpz_class(n_ + x) : x;
}

mpz_class SignedCodec::encode(std::int64_t x) const {
  mpz_class big;
  mpz_set_si(big.get_mpz_t(), x);
  return encode(big);
}

mpz_class SignedCodec::decode(const mpz_class& r) const {
  if (r < 0 || r >= n_) throw DomainError("residue outside [0, n)");
  return r <= half_n_ ? r : mpz_class(r - n_);
}

std::int64_t SignedCodec::decode_i64(const mpz_class& r) const {
  mpz_class v = decode(r);
  if (!mpz_fits_slong_p(v.get_mpz_t())) {
    throw OverflowError("decoded value does not fit in 64 bits");
  }
  return mpz_get_si(v.get_mpz_t());
}

mpz_class encode_signed(const mpz_class& x, const SignedCodec& codec) {
  return codec.encode(x);
}

mpz_class decode_signed(const mpz_class& r, const SignedCodec& codec) {
  return codec.decode(r);
}

std::int64_t quantize_fixed(double x, int scale_exp, std::int64_t bound) {
  const double scaled = std::ldexp(x, scale_exp);
  if (!std::isfinite(scaled) || std::fabs(scaled) > static_cast<double>(bound)) {
    throw OverflowError("quantize_fixed: |x| * 2^f exceeds bound");
  }
  // llround rounds halfway cases away from zero.
  std::int64_t q = std::llround(scaled);
  if (q > bound || q < -bound) {
    throw OverflowError("quantize_fixed: rounded value exceeds bound");
  }
  return q;
}

double dequantize(std::int64_t v, int scale_exp) {
  return std::ldexp(static_cast<double>(v), -scale_exp);
}

std::size_t Shape::size() const {
  if (dims.empty()) return 0;
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::size_t Shape::height() const {
  if (rank() != 3) throw ShapeError("height() on non-spatial shape " + str());
  return dims[0];
}

std::size_t Shape::width() const {
  if (rank() != 3) throw ShapeError("width() on non-spatial shape " + str());
  return dims[1];
}

std::size_t Shape::channels() const {
  if (rank() != 3) throw ShapeError("channels() on non-spatial shape " + str());
  return dims[2];
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ')';
  return os.str();
}

mpz_class PlainTensor::magnitude() const {
  std::uint64_t m = 1;
  for (auto v : values) {
    std::uint64_t a = v < 0 ? 0 - static_cast<std::uint64_t>(v) : static_cast<std::uint64_t>(v);
    m = std::max(m, a);
  }
  mpz_class out;
  mpz_import(out.get_mpz_t(), 1, 1, sizeof(m), 0, 0, &m);
  return out;
}

PlainTensor make_plain(Shape shape, int scale_exp, std::vector<std::int64_t> values) {
  if (shape.size() != values.size()) {
    throw ShapeError("tensor of shape " + shape.str() + " given " +
                     std::to_string(values.size()) + " values");
  }
  return PlainTensor{std::move(shape), scale_exp, std::move(values)};
}

EncTensor encrypt_tensor(const PlainTensor& t, const PublicKey& pk,
                         const SignedCodec& codec, Prg& prg) {
  if (t.shape.size() != t.values.size()) throw ShapeError("tensor size mismatch");
  EncTensor out;
  out.shape = t.shape;
  out.scale_exp = t.scale_exp;
  out.bound = t.magnitude();
  codec.check_plain(out.bound, "encrypt_tensor");
  std::vector<mpz_class> nonces(t.values.size());
  for (auto& r : nonces) r = sample_unit(pk, prg);
  out.cells.resize(t.values.size());
  parallel_for(t.values.size(), [&](std::size_t i) {
    out.cells[i] = encrypt_with_nonce(codec.encode(t.values[i]), pk, nonces[i]);
  });
  return out;
}

PlainTensor decrypt_tensor(const EncTensor& t, const KeyPair& keys,
                           const SignedCodec& codec) {
  PlainTensor out;
  out.shape = t.shape;
  out.scale_exp = t.scale_exp;
  out.values.resize(t.cells.size());
  parallel_for(t.cells.size(), [&](std::size_t i) {
    out.values[i] = codec.decode_i64(decrypt(t.cells[i], keys.sec, keys.pub));
  });
  return out;
}

PlainTensor quantize_tensor(Shape shape, std::span<const double> values,
                            int scale_exp) {
  std::vector<std::int64_t> q;
  q.reserve(values.size());
  for (double v : values) q.push_back(quantize_fixed(v, scale_exp));
  return make_plain(std::move(shape), scale_exp, std::move(q));
}

std::vector<double> dequantize_tensor(const PlainTensor& t) {
  std::vector<double> out;
  out.reserve(t.values.size());
  for (auto v : t.values) out.push_back(dequantize(v, t.scale_exp));
  return out;
}

Bytes serialize_tensor(const PlainTensor& t) {
  if (t.shape.rank() > 255) throw ShapeError("tensor rank exceeds 255");
  ByteWriter w;
  w.raw(std::string("PPTN"));
  w.u16(kTensorFileVersion);
  w.u8(static_cast<std::uint8_t>(t.shape.rank()));
  for (auto d : t.shape.dims) w.u32(static_cast<std::uint32_t>(d));
  w.i16(static_cast<std::int16_t>(t.scale_exp));
  for (auto v : t.values) w.i64_le(v);
  return std::move(w).take();
}

PlainTensor parse_tensor(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  auto magic = r.raw(4);
  if (std::string(magic.begin(), magic.end()) != "PPTN") {
    throw FormatError("not a tensor file (bad magic)");
  }
  if (auto v = r.u16(); v != kTensorFileVersion) {
    throw FormatError("unsupported tensor file version " + std::to_string(v));
  }
  Shape shape;
  const std::uint8_t rank = r.u8();
  for (std::uint8_t i = 0; i < rank; ++i) shape.dims.push_back(r.u32());
  const int scale = r.i16();
  const std::size_t count = shape.size();
  if (count * 8 != r.remaining()) {
    throw FormatError("tensor payload size does not match shape " + shape.str());
  }
  std::vector<std::int64_t> values(count);
  for (auto& v : values) v = r.i64_le();
  return make_plain(std::move(shape), scale, std::move(values));
}

}  // namespace popcorn
