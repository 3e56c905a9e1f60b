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

#include "popcorn/paillier.hpp"

#include <string>

#include "popcorn/error.hpp"
#include "popcorn/prime.hpp"

namespace popcorn {

PublicKey::PublicKey(mpz_class n) : n_(std::move(n)) {
  if (n_ < 3 || mpz_even_p(n_.get_mpz_t()) != 0) {
    throw DomainError("Paillier modulus must be odd and > 2");
  }
  g_ = n_ + 1;
  n_squared_ = n_ * n_;
  half_n_ = n_ / 2;
  bit_length_ = mpz_sizeinbase(n_.get_mpz_t(), 2);
  ciphertext_bytes_ = (mpz_sizeinbase(n_squared_.get_mpz_t(), 2) + 7) / 8;
}

SecretKey::SecretKey(mpz_class p, mpz_class q) : p_(std::move(p)), q_(std::move(q)) {
  if (p_ == q_) throw DomainError("Paillier primes must differ");
  const mpz_class n = p_ * q_;
  const mpz_class phi = (p_ - 1) * (q_ - 1);
  mpz_class g;
  mpz_gcd(g.get_mpz_t(), n.get_mpz_t(), phi.get_mpz_t());
  if (g != 1) throw DomainError("gcd(pq, (p-1)(q-1)) != 1");
  mpz_lcm(lambda_.get_mpz_t(), mpz_class(p_ - 1).get_mpz_t(),
          mpz_class(q_ - 1).get_mpz_t());
  // With g = n + 1, L(g^lambda mod n^2) = lambda mod n.
  mu_ = mod_inverse(lambda_, n);
}

bool is_supported_key_size(std::size_t bit_length) {
  return bit_length == 512 || bit_length == 1024 || bit_length == 2048 ||
         bit_length == 3072;
}

KeyPair keygen(std::size_t bit_length, Prg& prg) {
  if (!is_supported_key_size(bit_length)) {
    throw ConfigError("unsupported key size " + std::to_string(bit_length) +
                      " (expected 512, 1024, 2048 or 3072)");
  }
  const std::size_t half = bit_length / 2;
  for (int attempt = 0; attempt < 64; ++attempt) {
    mpz_class p = random_prime(half, prg);
    mpz_class q = random_prime(half, prg);
    if (p == q) continue;
    const mpz_class n = p * q;
    if (mpz_sizeinbase(n.get_mpz_t(), 2) != bit_length) continue;
    const mpz_class phi = (p - 1) * (q - 1);
    mpz_class g;
    mpz_gcd(g.get_mpz_t(), n.get_mpz_t(), phi.get_mpz_t());
    if (g != 1) continue;
    if (p > q) std::swap(p, q);
    return keygen_from_primes(p, q);
  }
  throw ConfigError("key generation gave up after 64 prime pairs");
}

KeyPair keygen_from_primes(const mpz_class& p, const mpz_class& q) {
  SecretKey sk(p, q);
  return KeyPair{PublicKey(p * q), std::move(sk)};
}

mpz_class sample_unit(const PublicKey& pk, Prg& prg) {
  mpz_class r;
  mpz_class g;
  do {
    r = prg.uniform(pk.n());
    mpz_gcd(g.get_mpz_t(), r.get_mpz_t(), pk.n().get_mpz_t());
  } while (r == 0 || g != 1);
  return r;
}

Ciphertext encrypt_with_nonce(const mpz_class& m, const PublicKey& pk,
                              const mpz_class& r) {
  if (m < 0 || m >= pk.n()) throw DomainError("plaintext outside [0, n)");
  // (1 + n)^m = 1 + m*n (mod n^2)
  mpz_class gm = (1 + m * pk.n()) % pk.n_squared();
  mpz_class rn;
  mpz_powm(rn.get_mpz_t(), r.get_mpz_t(), pk.n().get_mpz_t(),
           pk.n_squared().get_mpz_t());
  return Ciphertext{(gm * rn) % pk.n_squared()};
}

Ciphertext encrypt(const mpz_class& m, const PublicKey& pk, Prg& prg) {
  if (m < 0 || m >= pk.n()) throw DomainError("plaintext outside [0, n)");
  return encrypt_with_nonce(m, pk, sample_unit(pk, prg));
}

void check_ciphertext(const Ciphertext& c, const PublicKey& pk) {
  if (c.value < 0 || c.value >= pk.n_squared()) {
    throw DomainError("ciphertext outside [0, n^2)");
  }
}

mpz_class decrypt(const Ciphertext& c, const SecretKey& sk, const PublicKey& pk) {
  check_ciphertext(c, pk);
  mpz_class x;
  mpz_powm(x.get_mpz_t(), c.value.get_mpz_t(), sk.lambda().get_mpz_t(),
           pk.n_squared().get_mpz_t());
  mpz_class l = (x - 1) / pk.n();
  return (l * sk.mu()) % pk.n();
}

Ciphertext hadd(const Ciphertext& a, const Ciphertext& b, const PublicKey& pk) {
  return Ciphertext{(a.value * b.value) % pk.n_squared()};
}

Ciphertext hneg(const Ciphertext& c, const PublicKey& pk) {
  Ciphertext out;
  if (mpz_invert(out.value.get_mpz_t(), c.value.get_mpz_t(),
                 pk.n_squared().get_mpz_t()) == 0) {
    throw DomainError("ciphertext not invertible mod n^2");
  }
  return out;
}

Ciphertext hsub(const Ciphertext& a, const Ciphertext& b, const PublicKey& pk) {
  return hadd(a, hneg(b, pk), pk);
}

Ciphertext hmul_plain(const Ciphertext& c, const mpz_class& k,
                      const PublicKey& pk, Prg& prg) {
  mpz_class e = k % pk.n();
  if (e < 0) e += pk.n();
  if (e == 0) return encrypt(0, pk, prg);
  Ciphertext out;
  if (e > pk.half_n()) {
    // c^(e) and (c^-1)^(n-e) encrypt the same residue; the latter keeps the
    // exponent short for small negative multipliers.
    mpz_class neg_e = pk.n() - e;
    Ciphertext inv = hneg(c, pk);
    mpz_powm(out.value.get_mpz_t(), inv.value.get_mpz_t(), neg_e.get_mpz_t(),
             pk.n_squared().get_mpz_t());
  } else {
    mpz_powm(out.value.get_mpz_t(), c.value.get_mpz_t(), e.get_mpz_t(),
             pk.n_squared().get_mpz_t());
  }
  return out;
}

Ciphertext hmul_plain(const Ciphertext& c, std::int64_t k, const PublicKey& pk,
                      Prg& prg) {
  mpz_class big;
  mpz_set_si(big.get_mpz_t(), k);
  return hmul_plain(c, big, pk, prg);
}

Ciphertext rerandomize(const Ciphertext& c, const PublicKey& pk, Prg& prg) {
  return hadd(c, encrypt(0, pk, prg), pk);
}

mpz_class mod_inverse(const mpz_class& tau, const mpz_class& n) {
  mpz_class reduced = tau % n;
  if (reduced < 0) reduced += n;
  mpz_class out;
  if (reduced == 0 ||
      mpz_invert(out.get_mpz_t(), reduced.get_mpz_t(), n.get_mpz_t()) == 0) {
    throw DomainError("element not invertible modulo n");
  }
  return out;
}

void write_ciphertext(ByteWriter& out, const Ciphertext& c, const PublicKey& pk) {
  check_ciphertext(c, pk);
  out.mpz_fixed(c.value, pk.ciphertext_bytes());
}

Ciphertext read_ciphertext(ByteReader& in, const PublicKey& pk) {
  auto body = in.blob();
  if (body.size() != pk.ciphertext_bytes()) {
    throw FormatError("ciphertext has " + std::to_string(body.size()) +
                      " bytes, expected " + std::to_string(pk.ciphertext_bytes()));
  }
  Ciphertext c{mpz_from_bytes(body)};
  if (c.value >= pk.n_squared()) throw FormatError("ciphertext >= n^2");
  return c;
}

namespace {

constexpr std::uint8_t kPublicKind = 1;
constexpr std::uint8_t kSecretKind = 2;

ByteWriter key_header(std::uint8_t kind) {
  ByteWriter w;
  w.raw(std::string("PPKY"));
  w.u16(kKeyFileVersion);
  w.u8(kind);
  return w;
}

std::uint8_t read_key_header(ByteReader& r) {
  auto magic = r.raw(4);
  if (std::string(magic.begin(), magic.end()) != "PPKY") {
    throw FormatError("not a key file (bad magic)");
  }
  if (auto v = r.u16(); v != kKeyFileVersion) {
    throw FormatError("unsupported key file version " + std::to_string(v));
  }
  return r.u8();
}

}  // namespace

Bytes serialize_public_key(const PublicKey& pk) {
  ByteWriter w = key_header(kPublicKind);
  w.mpz(pk.n());
  w.mpz(pk.g());
  return std::move(w).take();
}

Bytes serialize_secret_key(const SecretKey& sk) {
  ByteWriter w = key_header(kSecretKind);
  w.mpz(sk.p());
  w.mpz(sk.q());
  return std::move(w).take();
}

PublicKey parse_public_key(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  if (read_key_header(r) != kPublicKind) throw FormatError("not a public key");
  mpz_class n = r.mpz();
  mpz_class g = r.mpz();
  r.expect_done("public key");
  PublicKey pk(n);
  if (g != pk.g()) throw FormatError("unsupported generator (expected n + 1)");
  return pk;
}

KeyPair parse_secret_key(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  if (read_key_header(r) != kSecretKind) throw FormatError("not a secret key");
  mpz_class p = r.mpz();
  mpz_class q = r.mpz();
  r.expect_done("secret key");
  return keygen_from_primes(p, q);
}

}  // namespace popcorn
