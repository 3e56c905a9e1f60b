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

#include <gmpxx.h>

#include "popcorn/random.hpp"

namespace popcorn {

inline constexpr int kMillerRabinRounds = 64;

/// Miller-Rabin with `rounds` bases drawn from `prg`, preceded by trial
/// division by the primes below 1000.
bool is_probable_prime(const mpz_class& candidate, Prg& prg,
                       int rounds = kMillerRabinRounds);

/// Random prime of exactly `bits` bits with the two top bits set, so the
/// product of two such primes has exactly 2*bits bits. Throws ConfigError
/// after `max_candidates` failed candidates.
mpz_class random_prime(std::size_t bits, Prg& prg,
                       std::size_t max_candidates = 200000);

}  // namespace popcorn
