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

// Server-side evaluation of conv / fc layers over encrypted activations.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "popcorn/encoding.hpp"
#include "popcorn/model.hpp"
#include "popcorn/paillier.hpp"

namespace popcorn {

/// Homomorphic work and traffic, from the server's point of view. A
/// multiply-accumulate is one hmul_plain plus one hadd; subtraction and
/// negation count as hadd.
struct OpCounter {
  std::uint64_t hmul_plain = 0;
  std::uint64_t bias_hmul_plain = 0;  // hmul_plain on E(1) for bias terms
  std::uint64_t hadd = 0;
  std::uint64_t comparisons = 0;      // real slots sent through a clamp round
  std::uint64_t dummy_slots = 0;
  std::uint64_t pair_diff_muladds = 0;
  std::uint64_t ciphertexts_sent = 0;
  std::uint64_t ciphertexts_received = 0;
  std::uint64_t rounds = 0;

  OpCounter& operator+=(const OpCounter& o);
  friend OpCounter operator+(OpCounter a, const OpCounter& b) { return a += b; }
  friend OpCounter operator-(const OpCounter& a, const OpCounter& b);
  friend bool operator==(const OpCounter&, const OpCounter&) = default;
};

/// Everything a linear layer needs besides its input: the key, the codec that
/// certifies bounds, the client-supplied E(1) for bias terms, a generator for
/// fresh encryptions of zero, and the counter to charge.
struct LinearContext {
  const PublicKey& pk;
  const SignedCodec& codec;
  const Ciphertext& enc_one;
  Prg& prg;
  OpCounter& ctr;
};

/// Upper bound on |output| given |input| <= input_bound; throws OverflowError
/// when it exceeds the codec's plaintext bound.
mpz_class certify_linear_bound(const Layer& layer, const mpz_class& input_bound,
                               const SignedCodec& codec);

/// Dispatches on the weight variant. `needed`, when given, restricts which
/// outputs are materialized; skipped cells hold Ciphertext{0}.
EncTensor eval_linear(const EncTensor& x, const Layer& layer, LinearContext& ctx,
                      const std::vector<bool>* needed = nullptr);

/// y = W x + b. DenseInt: one multiply-accumulate per nonzero weight.
/// PrunedCodebook: zero weights skipped, and each input ciphertext is
/// multiplied once per distinct codeword applied to it; the product is reused
/// by every output that shares it.
EncTensor eval_fc(const EncTensor& x, const Layer& layer, LinearContext& ctx);

/// Direct convolution with zero padding, same reuse rules as eval_fc.
EncTensor eval_conv(const EncTensor& x, const Layer& layer, LinearContext& ctx,
                    const std::vector<bool>* needed = nullptr);

/// Binary conv / fc with the +1 trick: S = sum of the receptive field is
/// computed once per output position and shared by every filter; each filter
/// then sums only its minority-sign inputs M and emits 2M - S (minority +1)
/// or S - 2M (minority -1). No hmul_plain apart from bias terms.
EncTensor eval_binarized(const EncTensor& x, const Layer& layer, LinearContext& ctx,
                         const std::vector<bool>* needed = nullptr);

/// Binary baseline: signed accumulation of every input for every filter.
EncTensor eval_binarized_naive(const EncTensor& x, const Layer& layer,
                               LinearContext& ctx);

/// Two conv outputs at the same channel that a pooling window compares.
struct ConvPair {
  std::size_t iy = 0, ix = 0;  // minuend position (output grid)
  std::size_t jy = 0, jx = 0;  // subtrahend position
  /// True when the positions differ by one step along exactly one axis, so
  /// their receptive fields overlap in a w x (w - s) band.
  bool adjacent() const;
};

/// Round-one pairing for every pooling window over a conv output.
struct ConvDiffPlan {
  LayerSpec conv;
  std::size_t pool_window = 0;
  std::size_t pool_stride = 0;
  std::size_t pooled_h = 0, pooled_w = 0;
  /// Indexed by pooled position py * pooled_w + px.
  std::vector<std::vector<ConvPair>> pairs;
  /// Unpaired positions (odd window sizes) carried into round two.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> carry;
};

/// Pairs the conv outputs of every pooling window with adjacent partners.
/// With `prg`, each window picks row- or column-wise pairing and the role of
/// each partner at random; without it pairing is row-wise and deterministic.
/// Requires non-overlapping windows (pool_stride == pool_window).
ConvDiffPlan plan_conv_diffs(const LayerSpec& conv, std::size_t pool_window,
                             std::size_t pool_stride, Prg* prg = nullptr);

/// Encrypts conv_i - conv_j at channel k without materializing either output:
/// one multiply-accumulate per input cell in the union of the two receptive
/// fields, with weight a - b on the overlap, a on cells only i sees and -b on
/// cells only j sees. For unpadded w x w filters at stride s < w that is
/// w^2 + w*s multiply-accumulates. Non-adjacent pairs use the naive route.
Ciphertext eval_pair_diff(const EncTensor& x, const Layer& conv, const ConvPair& pair,
                          std::size_t channel, LinearContext& ctx);

/// Reference route: evaluates conv_i and conv_j separately (2 w^2
/// multiply-accumulates) and subtracts.
Ciphertext eval_pair_diff_naive(const EncTensor& x, const Layer& conv,
                                const ConvPair& pair, std::size_t channel,
                                LinearContext& ctx);

/// Multiply-accumulates the two routes spend on one pair (ignoring padding).
std::uint64_t pair_diff_cost(std::size_t w, std::size_t s);
std::uint64_t pair_naive_cost(std::size_t w);

}  // namespace popcorn
