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

#include "popcorn/random.hpp"

#include <sodium.h>

#include <stdexcept>

#include "popcorn/bytes.hpp"
#include "popcorn/error.hpp"

namespace popcorn {
namespace {

void ensure_sodium() {
  static const int status = sodium_init();
  if (status < 0) throw Error("libsodium initialization failed");
}

}  // namespace

Seed seed_from_u64(std::uint64_t master) {
  ensure_sodium();
  std::array<std::uint8_t, 8> le{};
  for (int i = 0; i < 8; ++i) le[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(master >> (8 * i));
  static constexpr std::string_view kDomain = "popcorn.seed.v1";
  Seed out{};
  crypto_generichash_state st;
  crypto_generichash_init(&st, nullptr, 0, out.size());
  crypto_generichash_update(&st, reinterpret_cast<const unsigned char*>(kDomain.data()), kDomain.size());
  crypto_generichash_update(&st, le.data(), le.size());
  crypto_generichash_final(&st, out.data(), out.size());
  return out;
}

Seed derive_seed(const Seed& parent, std::string_view label) {
  ensure_sodium();
  Seed out{};
  crypto_generichash(out.data(), out.size(),
                     reinterpret_cast<const unsigned char*>(label.data()),
                     label.size(), parent.data(), parent.size());
  return out;
}

Seed derive_seed(const Seed& parent, std::string_view label,
                 std::uint64_t index) {
  std::string full(label);
  full.push_back('#');
  full += std::to_string(index);
  return derive_seed(parent, full);
}

Seed os_seed() {
  ensure_sodium();
  Seed out{};
  randombytes_buf(out.data(), out.size());
  return out;
}

Prg::Prg(const Seed& seed) : key_(seed) { ensure_sodium(); }

void Prg::refill() {
  static constexpr std::array<std::uint8_t, crypto_stream_chacha20_NONCEBYTES>
      kNonce{};
  buffer_.fill(0);
  crypto_stream_chacha20_xor_ic(buffer_.data(), buffer_.data(), buffer_.size(),
                                kNonce.data(), block_counter_, key_.data());
  block_counter_ += buffer_.size() / 64;
  pos_ = 0;
}

void Prg::fill(std::span<std::uint8_t> out) {
  std::size_t done = 0;
  while (done < out.size()) {
    if (pos_ == buffer_.size()) refill();
    std::size_t take = std::min(out.size() - done, buffer_.size() - pos_);
    std::copy_n(buffer_.begin() + static_cast<std::ptrdiff_t>(pos_), take,
                out.begin() + static_cast<std::ptrdiff_t>(done));
    pos_ += take;
    done += take;
  }
}

std::uint64_t Prg::next_u64() {
  std::array<std::uint8_t, 8> b{};
  fill(b);
  std::uint64_t v = 0;
  for (auto x : b) v = (v << 8) | x;
  return v;
}

std::uint64_t Prg::uniform(std::uint64_t bound) {
  if (bound == 0) throw DomainError("uniform: empty range");
  // Reject the top partial bucket.
  const std::uint64_t limit = max() - (max() % bound);
  for (;;) {
    std::uint64_t v = next_u64();
    if (v < limit || limit == 0) return v % bound;
  }
}

mpz_class Prg::random_bits(std::size_t bits) {
  if (bits == 0) return 0;
  Bytes buf((bits + 7) / 8);
  fill(buf);
  const std::size_t excess = buf.size() * 8 - bits;
  buf[0] &= static_cast<std::uint8_t>(0xFF >> excess);
  return mpz_from_bytes(buf);
}

mpz_class Prg::uniform(const mpz_class& bound) {
  if (sgn(bound) <= 0) throw DomainError("uniform: empty range");
  const std::size_t bits = mpz_sizeinbase(bound.get_mpz_t(), 2);
  for (;;) {
    mpz_class v = random_bits(bits);
    if (v < bound) return v;
  }
}

std::vector<std::size_t> random_permutation(std::size_t n, Prg& prg) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = prg.uniform(i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

std::vector<std::size_t> invert_permutation(std::span<const std::size_t> perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= perm.size()) throw DomainError("not a permutation");
    inv[perm[i]] = i;
  }
  return inv;
}

}  // namespace popcorn
