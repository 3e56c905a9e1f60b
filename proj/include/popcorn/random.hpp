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

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <gmpxx.h>

namespace popcorn {

/// 256-bit seed. Every random draw in a session descends from one master
/// seed through labeled derivation, so toggling one feature never shifts the
/// randomness consumed by another.
using Seed = std::array<std::uint8_t, 32>;

Seed seed_from_u64(std::uint64_t master);

/// Keyed BLAKE2b-256 of `label` under `parent`.
Seed derive_seed(const Seed& parent, std::string_view label);
Seed derive_seed(const Seed& parent, std::string_view label,
                 std::uint64_t index);

/// Fresh seed from the operating system.
Seed os_seed();

/// Deterministic counter-mode generator (ChaCha20 keystream keyed by a seed).
/// Not thread-safe; fork children with `derive_seed` for parallel use.
class Prg {
 public:
  explicit Prg(const Seed& seed);

  void fill(std::span<std::uint8_t> out);
  std::uint64_t next_u64();
  /// Uniform in [0, bound); bound > 0. Rejection sampling, no modulo bias.
  std::uint64_t uniform(std::uint64_t bound);
  /// Uniform in [0, bound); bound > 0.
  mpz_class uniform(const mpz_class& bound);
  /// Uniform integer with exactly `bits` random bits (value < 2^bits).
  mpz_class random_bits(std::size_t bits);
  bool coin() { return (next_u64() & 1U) != 0; }

  // UniformRandomBitGenerator, for callers that want <algorithm> helpers.
  using result_type = std::uint64_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next_u64(); }

 private:
  void refill();

  Seed key_;
  std::uint64_t block_counter_ = 0;
  std::array<std::uint8_t, 1024> buffer_{};
  std::size_t pos_ = buffer_.size();
};

/// Fisher-Yates permutation of [0, n) driven by `prg`. perm[i] is the source
/// index placed at destination slot i.
std::vector<std::size_t> random_permutation(std::size_t n, Prg& prg);

std::vector<std::size_t> invert_permutation(std::span<const std::size_t> perm);

}  // namespace popcorn
