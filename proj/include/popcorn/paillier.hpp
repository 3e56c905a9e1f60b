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

// Paillier additively homomorphic encryption with generator g = n + 1.
//
//   Enc(m; r) = (1 + n)^m * r^n            mod n^2
//   Dec(c)    = L(c^lambda mod n^2) * mu   mod n,   L(x) = (x - 1) / n
//
// Ciphertext products add plaintexts; raising a ciphertext to k multiplies
// its plaintext by k. All operations are pure given the caller's Prg.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include <gmpxx.h>

#include "popcorn/bytes.hpp"
#include "popcorn/random.hpp"

namespace popcorn {

struct Ciphertext {
  mpz_class value;

  friend bool operator==(const Ciphertext& a, const Ciphertext& b) {
    return a.value == b.value;
  }
};

class PublicKey {
 public:
  PublicKey() = default;
  explicit PublicKey(mpz_class n);

  const mpz_class& n() const { return n_; }
  const mpz_class& g() const { return g_; }
  const mpz_class& n_squared() const { return n_squared_; }
  const mpz_class& half_n() const { return half_n_; }
  std::size_t bit_length() const { return bit_length_; }
  /// Serialized width of a ciphertext: bytes needed for any residue mod n^2.
  std::size_t ciphertext_bytes() const { return ciphertext_bytes_; }

  friend bool operator==(const PublicKey& a, const PublicKey& b) {
    return a.n_ == b.n_;
  }

 private:
  mpz_class n_;
  mpz_class g_;
  mpz_class n_squared_;
  mpz_class half_n_;
  std::size_t bit_length_ = 0;
  std::size_t ciphertext_bytes_ = 0;
};

class SecretKey {
 public:
  SecretKey() = default;
  SecretKey(mpz_class p, mpz_class q);

  const mpz_class& p() const { return p_; }
  const mpz_class& q() const { return q_; }
  const mpz_class& lambda() const { return lambda_; }
  const mpz_class& mu() const { return mu_; }

 private:
  mpz_class p_;
  mpz_class q_;
  mpz_class lambda_;
  mpz_class mu_;
};

struct KeyPair {
  PublicKey pub;
  SecretKey sec;
};

/// Key sizes accepted by `keygen`.
bool is_supported_key_size(std::size_t bit_length);

/// Draws two primes of bit_length/2 bits each from `prg` until
/// gcd(pq, (p-1)(q-1)) = 1 and n has exactly bit_length bits.
KeyPair keygen(std::size_t bit_length, Prg& prg);

/// Builds a key pair from caller-chosen primes (toy keys, fixtures, key files).
/// Throws DomainError if p == q or gcd(pq, (p-1)(q-1)) != 1.
KeyPair keygen_from_primes(const mpz_class& p, const mpz_class& q);

/// Uniform r in Z*_n.
mpz_class sample_unit(const PublicKey& pk, Prg& prg);

Ciphertext encrypt(const mpz_class& m, const PublicKey& pk, Prg& prg);
/// Encryption with an explicit nonce r, gcd(r, n) = 1.
Ciphertext encrypt_with_nonce(const mpz_class& m, const PublicKey& pk,
                              const mpz_class& r);
mpz_class decrypt(const Ciphertext& c, const SecretKey& sk, const PublicKey& pk);

Ciphertext hadd(const Ciphertext& a, const Ciphertext& b, const PublicKey& pk);
/// Encrypts the negated plaintext: c^-1 mod n^2.
Ciphertext hneg(const Ciphertext& c, const PublicKey& pk);
/// Encrypts (m1 - m2) mod n.
Ciphertext hsub(const Ciphertext& a, const Ciphertext& b, const PublicKey& pk);

/// Encrypts (m * k) mod n for signed k. k = 0 (mod n) yields a fresh
/// encryption of zero drawn from `prg` instead of the degenerate c^0 = 1.
Ciphertext hmul_plain(const Ciphertext& c, const mpz_class& k,
                      const PublicKey& pk, Prg& prg);
Ciphertext hmul_plain(const Ciphertext& c, std::int64_t k, const PublicKey& pk,
                      Prg& prg);

/// Multiplies by a fresh encryption of zero.
Ciphertext rerandomize(const Ciphertext& c, const PublicKey& pk, Prg& prg);

/// tau^-1 mod n. Throws DomainError when gcd(tau mod n, n) != 1.
mpz_class mod_inverse(const mpz_class& tau, const mpz_class& n);

/// Throws DomainError unless 0 <= c < n^2.
void check_ciphertext(const Ciphertext& c, const PublicKey& pk);

// Wire and file encodings.
//
// A ciphertext is a u32 big-endian length followed by the big-endian residue,
// left-padded to pk.ciphertext_bytes() so frame sizes never depend on values.
// Key files: "PPKY", u16 version, u8 kind (1 public, 2 secret), then
// length-prefixed big-endian integers: n, g (public) or p, q (secret).

inline constexpr std::uint16_t kKeyFileVersion = 1;

void write_ciphertext(ByteWriter& out, const Ciphertext& c, const PublicKey& pk);
Ciphertext read_ciphertext(ByteReader& in, const PublicKey& pk);

Bytes serialize_public_key(const PublicKey& pk);
Bytes serialize_secret_key(const SecretKey& sk);
PublicKey parse_public_key(std::span<const std::uint8_t> data);
/// Rebuilds the full pair from a secret-key container.
KeyPair parse_secret_key(std::span<const std::uint8_t> data);

}  // namespace popcorn
