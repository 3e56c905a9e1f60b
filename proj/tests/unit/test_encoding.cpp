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

#include <gtest/gtest.h>

#include <cmath>

#include "popcorn/encoding.hpp"
#include "popcorn/error.hpp"
#include "support.hpp"

namespace popcorn {
namespace {

using testing::Harness;

SignedCodec toy_codec() { return SignedCodec(143, 71, 1); }

TEST(Encoding, ToyModulusExamples) {
  const SignedCodec c = toy_codec();
  EXPECT_EQ(c.half_n(), 71);
  EXPECT_EQ(encode_signed(-5, c), 138);
  EXPECT_EQ(encode_signed(0, c), 0);
  EXPECT_EQ(decode_signed(138, c), -5);
  EXPECT_EQ(decode_signed(71, c), 71);
  EXPECT_EQ(decode_signed(72, c), -71);
  for (long x = -71; x <= 71; ++x) {
    ASSERT_EQ(decode_signed(encode_signed(x, c), c), x);
  }
  // Boundary by brute force: every residue above half_n decodes negative.
  for (long r = 0; r < 143; ++r) {
    const mpz_class d = decode_signed(r, c);
    ASSERT_EQ(d, r <= 71 ? mpz_class(r) : mpz_class(r - 143));
  }
  EXPECT_THROW(encode_signed(72, c), OverflowError);
  EXPECT_THROW(encode_signed(-72, c), OverflowError);
  EXPECT_THROW(decode_signed(143, c), DomainError);
}

TEST(Encoding, CodecBoundValidation) {
  EXPECT_THROW(SignedCodec(143, 0, 1), ConfigError);
  EXPECT_THROW(SignedCodec(143, 8, 9), ConfigError);  // 72 > 71.5
  EXPECT_NO_THROW(SignedCodec(143, 7, 10));
  const auto& pk = testing::test_keys().pub;
  const SignedCodec d(pk);
  EXPECT_EQ(d.plain_bound(), mpz_class(1) << 96);
  EXPECT_EQ(d.blind_bound(), mpz_class(1) << 64);
}

TEST(Encoding, WraparoundFreedomExhaustiveAtToyModulus) {
  const SignedCodec c(143, 7, 10);
  for (long x = -7; x <= 7; ++x) {
    for (long tau = -10; tau <= 10; ++tau) {
      const mpz_class prod = (encode_signed(x, c) * ((tau % 143 + 143) % 143)) % 143;
      ASSERT_EQ(decode_signed(prod, c), x * tau) << x << " * " << tau;
      if (x * tau != 0) ASSERT_EQ(decode_signed(prod, c) > 0, (x > 0) == (tau > 0));
    }
  }
}

TEST(Encoding, WraparoundFreedomRandomizedAtFullSize) {
  Harness h(21);
  const mpz_class bx = h.codec.plain_bound(), bt = h.codec.blind_bound();
  const mpz_class& n = h.keys.pub.n();
  for (int i = 0; i < 2000; ++i) {
    mpz_class x = h.server_prg.uniform(2 * bx + 1) - bx;
    mpz_class tau = h.server_prg.uniform(2 * bt + 1) - bt;
    mpz_class t_mod = tau % n;
    if (t_mod < 0) t_mod += n;
    const mpz_class prod = (h.codec.encode(x) * t_mod) % n;
    ASSERT_EQ(h.codec.decode(prod), mpz_class(x * tau));
  }
}

TEST(Encoding, QuantizeFixed) {
  EXPECT_EQ(quantize_fixed(1.5, 4), 24);
  EXPECT_EQ(quantize_fixed(-0.03125, 5), -1);
  EXPECT_EQ(quantize_fixed(0.5, 0), 1);    // half away from zero
  EXPECT_EQ(quantize_fixed(-0.5, 0), -1);
  EXPECT_EQ(quantize_fixed(2.49, 0), 2);
  EXPECT_THROW(quantize_fixed(1000.0, 4, 100), OverflowError);
  EXPECT_THROW(quantize_fixed(std::nan(""), 4), OverflowError);

  Prg prg(seed_from_u64(22));
  for (int i = 0; i < 10000; ++i) {
    const double x = (static_cast<double>(prg.next_u64() >> 11) / 9007199254740992.0 - 0.5) * 200;
    const int f = static_cast<int>(prg.uniform(20));
    const double err = std::abs(dequantize(quantize_fixed(x, f), f) - x);
    ASSERT_LE(err, std::ldexp(1.0, -f - 1) * (1 + 1e-12)) << x << " at f=" << f;
  }
}

TEST(Encoding, ShapeHelpers) {
  const Shape s = Shape::hwc(5, 4, 3);
  EXPECT_EQ(s.size(), 60u);
  EXPECT_EQ(s.height(), 5u);
  EXPECT_EQ(s.width(), 4u);
  EXPECT_EQ(s.channels(), 3u);
  EXPECT_EQ(hwc_index(s, 1, 2, 1), (1 * 4 + 2) * 3 + 1u);
  EXPECT_THROW(Shape::flat(4).height(), ShapeError);
  EXPECT_THROW(make_plain(Shape::flat(3), 0, {1, 2}), ShapeError);
}

TEST(Encoding, TensorRoundTrip) {
  Harness h(23);
  auto vals = testing::random_values(h.server_prg, 75, -100000, 100000);
  vals[0] = 0;
  vals[1] = -1;
  const PlainTensor t = make_plain(Shape::hwc(5, 5, 3), 8, vals);
  const EncTensor e = encrypt_tensor(t, h.keys.pub, h.codec, h.server_prg);
  EXPECT_EQ(e.shape, t.shape);
  EXPECT_EQ(e.scale_exp, 8);
  EXPECT_EQ(e.bound, t.magnitude());
  EXPECT_EQ(decrypt_tensor(e, h.keys, h.codec), t);
}

TEST(Encoding, QuantizeTensorAndBack) {
  const std::vector<double> v{0.25, -1.0, 3.0};
  const PlainTensor t = quantize_tensor(Shape::flat(3), v, 2);
  EXPECT_EQ(t.values, (std::vector<std::int64_t>{1, -4, 12}));
  EXPECT_EQ(dequantize_tensor(t), v);
  EXPECT_EQ(t.magnitude(), 12);
}

TEST(Encoding, TensorFile) {
  const PlainTensor t = make_plain(Shape::hwc(2, 1, 2), -3, {1, -2, 1ll << 40, -(1ll << 50)});
  const Bytes b = serialize_tensor(t);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "PPTN");
  // magic, version, rank, 3 dims, scale, 4 values
  EXPECT_EQ(b.size(), 4 + 2 + 1 + 3 * 4 + 2 + 4 * 8u);
  EXPECT_EQ(parse_tensor(b), t);
  Bytes truncated(b.begin(), b.end() - 1);
  EXPECT_THROW(parse_tensor(truncated), FormatError);
  Bytes bad = b;
  bad[0] = 'X';
  EXPECT_THROW(parse_tensor(bad), FormatError);
}

}  // namespace
}  // namespace popcorn
