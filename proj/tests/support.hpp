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

// Shared fixtures for the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "popcorn/encoding.hpp"
#include "popcorn/paillier.hpp"
#include "popcorn/protocols.hpp"
#include "popcorn/random.hpp"

namespace popcorn::testing {

/// Deterministic key pair per size, generated once per process.
inline const KeyPair& test_keys(std::size_t bits = 1024) {
  static std::map<std::size_t, std::unique_ptr<KeyPair>> cache;
  auto& slot = cache[bits];
  if (!slot) {
    Prg prg(derive_seed(seed_from_u64(0x5eed), "test-keys", bits));
    slot = std::make_unique<KeyPair>(keygen(bits, prg));
  }
  return *slot;
}

inline std::int64_t uniform_i64(Prg& prg, std::int64_t lo, std::int64_t hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(prg.uniform(span));
}

inline std::vector<std::int64_t> random_values(Prg& prg, std::size_t n, std::int64_t lo,
                                               std::int64_t hi) {
  std::vector<std::int64_t> v(n);
  for (auto& x : v) x = uniform_i64(prg, lo, hi);
  return v;
}

/// Everything one side needs to run protocol rounds against an in-process
/// client.
struct Harness {
  const KeyPair& keys;
  SignedCodec codec;
  Prg server_prg;
  Prg client_prg;
  OpCounter ctr;
  ProtocolConfig cfg;
  LocalClientChannel channel;
  ServerContext ctx;

  explicit Harness(std::uint64_t seed, std::size_t bits = 1024)
      : keys(test_keys(bits)),
        codec(keys.pub),
        server_prg(derive_seed(seed_from_u64(seed), "server")),
        client_prg(derive_seed(seed_from_u64(seed), "client")),
        channel(keys, codec, client_prg),
        ctx{keys.pub, codec, server_prg, ctr, cfg, channel} {}

  Harness(const Harness&) = delete;
  Harness& operator=(const Harness&) = delete;

  EncTensor encrypt(const Shape& shape, const std::vector<std::int64_t>& values,
                    int scale = 0) {
    auto t = make_plain(shape, scale, values);
    return encrypt_tensor(t, keys.pub, codec, server_prg);
  }
  std::vector<std::int64_t> decrypt(const EncTensor& t) {
    return decrypt_tensor(t, keys, codec).values;
  }
  std::int64_t decrypt(const Ciphertext& c) {
    return codec.decode_i64(popcorn::decrypt(c, keys.sec, keys.pub));
  }
};

}  // namespace popcorn::testing
