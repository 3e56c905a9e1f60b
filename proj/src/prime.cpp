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

#include "popcorn/prime.hpp"

#include <array>
#include <string>
#include <vector>

#include "popcorn/error.hpp"

namespace popcorn {
namespace {

const std::vector<unsigned long>& small_primes() {
  static const std::vector<unsigned long> primes = [] {
    std::vector<unsigned long> out;
    std::array<bool, 1000> composite{};
    for (unsigned long i = 2; i < composite.size(); ++i) {
      if (composite[i]) continue;
      out.push_back(i);
      for (unsigned long j = i * i; j < composite.size(); j += i) composite[j] = true;
    }
    return out;
  }();
  return primes;
}

}  // namespace

bool is_probable_prime(const mpz_class& candidate, Prg& prg, int rounds) {
  if (candidate < 2) return false;
  for (unsigned long p : small_primes()) {
    if (candidate == p) return true;
    if (mpz_divisible_ui_p(candidate.get_mpz_t(), p) != 0) return false;
  }

  // candidate - 1 = d * 2^s with d odd
  const mpz_class minus_one = candidate - 1;
  mpz_class d = minus_one;
  unsigned long s = mpz_scan1(d.get_mpz_t(), 0);
  mpz_fdiv_q_2exp(d.get_mpz_t(), d.get_mpz_t(), s);

  const mpz_class base_range = candidate - 3;  // bases in [2, candidate-2]
  mpz_class x;
  for (int round = 0; round < rounds; ++round) {
    mpz_class a = prg.uniform(base_range) + 2;
    mpz_powm(x.get_mpz_t(), a.get_mpz_t(), d.get_mpz_t(), candidate.get_mpz_t());
    if (x == 1 || x == minus_one) continue;
    bool witness = true;
    for (unsigned long r = 1; r < s; ++r) {
      mpz_powm_ui(x.get_mpz_t(), x.get_mpz_t(), 2, candidate.get_mpz_t());
      if (x == minus_one) {
        witness = false;
        break;
      }
    }
    if (witness) return false;
  }
  return true;
}

mpz_class random_prime(std::size_t bits, Prg& prg, std::size_t max_candidates) {
  if (bits < 8) throw ConfigError("prime size below 8 bits");
  for (std::size_t attempt = 0; attempt < max_candidates; ++attempt) {
    mpz_class c = prg.random_bits(bits);
    mpz_setbit(c.get_mpz_t(), bits - 1);
    mpz_setbit(c.get_mpz_t(), bits - 2);
    mpz_setbit(c.get_mpz_t(), 0);
    if (is_probable_prime(c, prg)) return c;
  }
  throw ConfigError("prime generation gave up after " +
                    std::to_string(max_candidates) + " candidates");
}

}  // namespace popcorn
