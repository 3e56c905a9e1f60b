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

// Interactive non-linear layers. The server blinds, the client clamps at
// zero, the server unblinds:
//
//   relu:  slots = shuffle(x ++ dummies), y_i = tau_i * slot_i, tau_i signed
//   max:   y_k = tau_k * (x_i - x_j), tau_k > 0, pair order shuffled
//
// One call to RoundChannel::round_trip is one protocol round.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "popcorn/encoding.hpp"
#include "popcorn/linear.hpp"
#include "popcorn/paillier.hpp"
#include "popcorn/random.hpp"

namespace popcorn {

enum class RoundKind : std::uint8_t { kRelu = 1, kMax = 2 };

/// Deterministic overrides for tests. Only honoured when the library is built
/// with POPCORN_TEST_HOOKS; otherwise setting any of them is a ConfigError.
struct TestHooks {
  bool identity_permutation = false;
  int force_tau_sign = 0;  // 0 = random, +1 / -1 = forced
  bool no_dummies = false;
  bool tau_one = false;    // tau = +1 for every slot

  bool any() const {
    return identity_permutation || force_tau_sign != 0 || no_dummies || tau_one;
  }
};

struct ProtocolConfig {
  std::size_t min_dummies = 8;
  double dummy_fraction = 0.1;
  bool rerandomize = true;
  TestHooks hooks;

  /// t = max(min_dummies, ceil(dummy_fraction * m)).
  std::size_t dummy_count(std::size_t m) const;
  void validate() const;
};

/// True when this build honours TestHooks.
bool test_hooks_enabled();

/// Server-private state of one round. Never serialized.
struct BlindingRecord {
  RoundKind kind = RoundKind::kRelu;
  Seed shuffle_seed{};
  std::vector<std::size_t> permutation;    // slot -> source index
  std::vector<std::size_t> dummy_slots;    // ascending slot indices
  std::vector<mpz_class> dummy_values;     // aligned with dummy_slots
  std::vector<mpz_class> taus;             // signed, per slot
  std::vector<mpz_class> tau_invs;         // tau^-1 mod n, per slot
  std::size_t real_count = 0;

  BlindingRecord() = default;
  BlindingRecord(BlindingRecord&&) = default;
  BlindingRecord& operator=(BlindingRecord&&) = default;
  BlindingRecord(const BlindingRecord&) = delete;
  BlindingRecord& operator=(const BlindingRecord&) = delete;
};

struct BlindedBatch {
  RoundKind kind = RoundKind::kRelu;
  std::vector<Ciphertext> cells;
};

/// Carries a batch to the key holder and returns its per-slot responses.
class RoundChannel {
 public:
  virtual ~RoundChannel() = default;
  virtual std::vector<Ciphertext> round_trip(const BlindedBatch& batch) = 0;
};

/// Channel that answers in-process with a local key pair (tests, bench).
class LocalClientChannel : public RoundChannel {
 public:
  LocalClientChannel(const KeyPair& keys, const SignedCodec& codec, Prg& prg)
      : keys_(keys), codec_(codec), prg_(prg) {}
  std::vector<Ciphertext> round_trip(const BlindedBatch& batch) override;
  const std::vector<BlindedBatch>& seen() const { return seen_; }
  void keep_transcript(bool on) { keep_ = on; }

 private:
  const KeyPair& keys_;
  const SignedCodec& codec_;
  Prg& prg_;
  bool keep_ = false;
  std::vector<BlindedBatch> seen_;
};

struct ServerContext {
  const PublicKey& pk;
  const SignedCodec& codec;
  Prg& prg;
  OpCounter& ctr;
  const ProtocolConfig& cfg;
  RoundChannel& channel;
};

struct BlindedRelu {
  BlindedBatch batch;
  BlindingRecord record;
  std::vector<Ciphertext> shuffled;  // unblinded slot contents, by slot
};

/// Appends dummies, shuffles and blinds with signed tau. Refuses (throws
/// OverflowError) unless bound * B_tau stays clear of n / 2.
BlindedRelu server_blind_relu(std::span<const Ciphertext> x, const mpz_class& bound,
                              ServerContext& ctx);

/// Client side of both round kinds: decrypt, signed-decode, clamp at zero,
/// re-encrypt with fresh randomness. Malformed ciphertexts abort the session.
std::vector<Ciphertext> client_respond(const BlindedBatch& batch, const KeyPair& keys,
                                       const SignedCodec& codec, Prg& prg);

/// Undoes tau and the shuffle and drops dummies; returns relu(x) in the
/// original order.
std::vector<Ciphertext> server_unblind_relu(std::span<const Ciphertext> responses,
                                            const BlindingRecord& record,
                                            std::span<const Ciphertext> shuffled,
                                            ServerContext& ctx);

struct BlindedMax {
  BlindedBatch batch;
  BlindingRecord record;
};

/// Blinds x_i - x_j with positive tau and shuffles the pair order.
/// `diff_bound` bounds |x_i - x_j|.
BlindedMax server_blind_max_pairs(std::span<const Ciphertext> diffs,
                                  const mpz_class& diff_bound, ServerContext& ctx);

/// E(max(x_i, x_j)) = E(x_j) + response * tau^-1, in the original pair order.
std::vector<Ciphertext> server_unblind_max(std::span<const Ciphertext> responses,
                                           const BlindingRecord& record,
                                           std::span<const Ciphertext> xj,
                                           ServerContext& ctx);

/// One full relu round over a tensor.
EncTensor secure_relu(const EncTensor& x, ServerContext& ctx);

/// Precomputed first tournament round for one pooling window: encrypted
/// differences, the matching subtrahends, and unpaired candidates.
struct WindowFirstRound {
  std::vector<Ciphertext> diffs;
  std::vector<Ciphertext> xj;
  std::vector<Ciphertext> carry;
};

/// Candidate lists of every pooling window, indexed by pooled (h, w, c).
std::vector<std::vector<Ciphertext>> pooling_windows(const EncTensor& x, std::size_t t,
                                                     std::size_t s);

/// ceil(log2 m) rounds over all windows at once; each round shuffles every
/// window's candidates, pairs them, and carries an odd one over. Exactly m-1
/// comparisons per window. `first`, when given, replaces round one.
std::vector<Ciphertext> max_tournament(std::vector<std::vector<Ciphertext>> windows,
                                       const mpz_class& bound, ServerContext& ctx,
                                       std::vector<WindowFirstRound>* first = nullptr);

EncTensor secure_maxpool(const EncTensor& x, std::size_t t, std::size_t s,
                         ServerContext& ctx,
                         std::vector<WindowFirstRound>* first = nullptr);

/// relu(maxpool(x)) as a tournament plus a single relu round on the window
/// winners: m comparisons per window instead of 2m - 1.
EncTensor fused_relu_maxpool(const EncTensor& x, std::size_t t, std::size_t s,
                             ServerContext& ctx,
                             std::vector<WindowFirstRound>* first = nullptr);

/// Number of tournament rounds for an m-element window.
std::size_t tournament_rounds(std::size_t m);

}  // namespace popcorn
