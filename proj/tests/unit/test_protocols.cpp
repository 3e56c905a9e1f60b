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

#include <algorithm>
#include <map>
#include <set>

#include "popcorn/error.hpp"
#include "popcorn/protocols.hpp"
#include "support.hpp"

namespace popcorn {
namespace {

using testing::Harness;

std::vector<std::int64_t> relu_oracle(std::vector<std::int64_t> v) {
  for (auto& x : v) x = x < 0 ? 0 : x;
  return v;
}

// Direct loop over windows; independent of pooling_windows().
std::vector<std::int64_t> maxpool_oracle(const std::vector<std::int64_t>& v, std::size_t h,
                                         std::size_t w, std::size_t c, std::size_t t,
                                         std::size_t s) {
  const std::size_t oh = (h - t) / s + 1, ow = (w - t) / s + 1;
  std::vector<std::int64_t> out;
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t k = 0; k < c; ++k) {
        std::int64_t best = v[((y * s) * w + x * s) * c + k];
        for (std::size_t u = 0; u < t; ++u)
          for (std::size_t q = 0; q < t; ++q)
            best = std::max(best, v[((y * s + u) * w + x * s + q) * c + k]);
        out.push_back(best);
      }
  return out;
}

TEST(Protocols, DummyCountPolicy) {
  ProtocolConfig cfg;
  EXPECT_EQ(cfg.dummy_count(4), 8u);
  EXPECT_EQ(cfg.dummy_count(80), 8u);
  EXPECT_EQ(cfg.dummy_count(81), 9u);
  EXPECT_EQ(cfg.dummy_count(1000), 100u);
}

TEST(Protocols, ReluExampleVector) {
  Harness h(1);
  auto x = h.encrypt(Shape::flat(4), {-3, 0, 5, -1});
  auto y = secure_relu(x, h.ctx);
  EXPECT_EQ(h.decrypt(y), (std::vector<std::int64_t>{0, 0, 5, 0}));
  EXPECT_EQ(h.ctr.comparisons, 4u);
  EXPECT_EQ(h.ctr.dummy_slots, 8u);
  EXPECT_EQ(h.ctr.rounds, 1u);
  EXPECT_EQ(h.ctr.ciphertexts_sent, 12u);
  EXPECT_EQ(h.ctr.ciphertexts_received, 12u);
}

TEST(Protocols, ReluBatchLengthIsRealPlusDummies) {
  Harness h(2);
  auto x = h.encrypt(Shape::flat(100), std::vector<std::int64_t>(100, 1));
  auto blinded = server_blind_relu(x.cells, x.bound, h.ctx);
  EXPECT_EQ(blinded.batch.cells.size(), 110u);
  EXPECT_EQ(blinded.record.dummy_slots.size(), 10u);
  std::set<std::size_t> seen(blinded.record.permutation.begin(), blinded.record.permutation.end());
  EXPECT_EQ(seen.size(), 110u);
}

TEST(Protocols, ReluBothTauSignsRandomValues) {
  for (int sign : {+1, -1, 0}) {
    Harness h(10 + static_cast<std::uint64_t>(sign + 1));
    h.cfg.hooks.force_tau_sign = sign;
    auto values = testing::random_values(h.server_prg, 64, -1000, 1000);
    values[0] = 0;
    auto y = secure_relu(h.encrypt(Shape::flat(values.size()), values), h.ctx);
    EXPECT_EQ(h.decrypt(y), relu_oracle(values)) << "sign " << sign;
  }
}

TEST(Protocols, DegenerateBlindingShowsPlaintexts) {
  Harness h(3);
  h.cfg.hooks.identity_permutation = true;
  h.cfg.hooks.tau_one = true;
  h.cfg.hooks.no_dummies = true;
  std::vector<std::int64_t> values{4, -2, 0, 9};
  auto x = h.encrypt(Shape::flat(4), values);
  auto blinded = server_blind_relu(x.cells, x.bound, h.ctx);
  std::vector<std::int64_t> seen;
  for (const auto& c : blinded.batch.cells) seen.push_back(h.decrypt(c));
  EXPECT_EQ(seen, values);
}

TEST(Protocols, ClientClampsAndRefreshes) {
  Harness h(4);
  BlindedBatch batch;
  batch.cells = h.encrypt(Shape::flat(2), {-12, 7}).cells;
  auto resp = client_respond(batch, h.keys, h.codec, h.client_prg);
  EXPECT_EQ(h.decrypt(resp[0]), 0);
  EXPECT_EQ(h.decrypt(resp[1]), 7);
  EXPECT_NE(resp[1], batch.cells[1]);
}

TEST(Protocols, ClientRejectsOutOfRangeCiphertext) {
  Harness h(5);
  BlindedBatch batch;
  batch.cells.push_back(Ciphertext{h.keys.pub.n_squared()});
  try {
    client_respond(batch, h.keys, h.codec, h.client_prg);
    FAIL() << "expected abort";
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.reason(), AbortReason::kMalformedFrame);
  }
}

TEST(Protocols, ReluRefusesBoundOverflow) {
  Harness h(6);
  auto x = h.encrypt(Shape::flat(1), {1});
  mpz_class too_big = h.codec.plain_bound() + 1;
  EXPECT_THROW(server_blind_relu(x.cells, too_big, h.ctx), OverflowError);
}

TEST(Protocols, MaxPairExamples) {
  Harness h(7);
  const std::vector<std::pair<std::int64_t, std::int64_t>> cases{{9, 4}, {4, 4}, {-2, -7}, {-7, -2}};
  std::vector<Ciphertext> diffs, xj;
  std::vector<std::int64_t> expect;
  for (auto [a, b] : cases) {
    auto ea = h.encrypt(Shape::flat(1), {a}).cells[0];
    auto eb = h.encrypt(Shape::flat(1), {b}).cells[0];
    diffs.push_back(hsub(ea, eb, h.keys.pub));
    xj.push_back(eb);
    expect.push_back(std::max(a, b));
  }
  auto blinded = server_blind_max_pairs(diffs, 20, h.ctx);
  for (const auto& tau : blinded.record.taus) EXPECT_GT(tau, 0);
  auto resp = h.channel.round_trip(blinded.batch);
  auto out = server_unblind_max(resp, blinded.record, xj, h.ctx);
  for (std::size_t k = 0; k < cases.size(); ++k) EXPECT_EQ(h.decrypt(out[k]), expect[k]);
}

TEST(Protocols, TournamentWindowExamples) {
  Harness h(8);
  // 4x4 input, t = s = 2; the top-left window is {3, -1, 7, 0}.
  std::vector<std::int64_t> v{3, -1, 5, 5,  //
                              7, 0, 5, 5,   //
                              1, 2, 3, 4,   //
                              -8, -9, -6, -7};
  auto y = secure_maxpool(h.encrypt(Shape::hwc(4, 4, 1), v), 2, 2, h.ctx);
  EXPECT_EQ(h.decrypt(y), (std::vector<std::int64_t>{7, 5, 2, 4}));
  EXPECT_EQ(h.ctr.comparisons, 4u * 3u);
  EXPECT_EQ(h.ctr.rounds, 2u);
}

TEST(Protocols, MaxpoolMatchesOracle) {
  Harness h(11);
  for (int trial = 0; trial < 5; ++trial) {
    auto v = testing::random_values(h.server_prg, 4 * 4 * 2, -50, 50);
    h.ctr = OpCounter{};
    auto y = secure_maxpool(h.encrypt(Shape::hwc(4, 4, 2), v), 2, 2, h.ctx);
    EXPECT_EQ(y.shape, Shape::hwc(2, 2, 2));
    EXPECT_EQ(h.decrypt(y), maxpool_oracle(v, 4, 4, 2, 2, 2));
    EXPECT_EQ(h.ctr.comparisons, 8u * 3u);
  }
}

TEST(Protocols, OverlappingAndOddWindows) {
  Harness h(12);
  auto v = testing::random_values(h.server_prg, 5 * 5, -50, 50);
  auto y = secure_maxpool(h.encrypt(Shape::hwc(5, 5, 1), v), 3, 1, h.ctx);
  EXPECT_EQ(h.decrypt(y), maxpool_oracle(v, 5, 5, 1, 3, 1));
  EXPECT_EQ(h.ctr.comparisons, 9u * 8u);
  EXPECT_EQ(h.ctr.rounds, tournament_rounds(9));
}

TEST(Protocols, WindowOfOneIsIdentity) {
  Harness h(13);
  std::vector<std::int64_t> v{1, -2, 3, -4};
  auto y = secure_maxpool(h.encrypt(Shape::hwc(2, 2, 1), v), 1, 1, h.ctx);
  EXPECT_EQ(h.decrypt(y), v);
  EXPECT_EQ(h.ctr.rounds, 0u);
}

TEST(Protocols, MaxpoolRejectsUncoverableDims) {
  Harness h(14);
  auto x = h.encrypt(Shape::hwc(5, 5, 1), std::vector<std::int64_t>(25, 0));
  EXPECT_THROW(secure_maxpool(x, 2, 2, h.ctx), ShapeError);
}

TEST(Protocols, RoundCounts) {
  EXPECT_EQ(tournament_rounds(1), 0u);
  EXPECT_EQ(tournament_rounds(2), 1u);
  EXPECT_EQ(tournament_rounds(4), 2u);
  EXPECT_EQ(tournament_rounds(9), 4u);
  EXPECT_EQ(tournament_rounds(121), 7u);
}

TEST(Protocols, FusedAllNegativeWindowIsZero) {
  Harness h(15);
  std::vector<std::int64_t> v{-5, -3, 1, 2,  //
                              -9, -1, 3, 4,  //
                              0, 0, -2, -2,  //
                              0, 0, -2, -2};
  auto y = fused_relu_maxpool(h.encrypt(Shape::hwc(4, 4, 1), v), 2, 2, h.ctx);
  EXPECT_EQ(h.decrypt(y), (std::vector<std::int64_t>{0, 4, 0, 0}));
  EXPECT_EQ(h.ctr.comparisons, 4u * 4u);
  EXPECT_EQ(h.ctr.rounds, 3u);
}

TEST(Protocols, FusedVersusUnfusedComparisons) {
  Harness fused(16), unfused(16);
  auto v = testing::random_values(fused.server_prg, 4 * 4, -30, 30);
  auto a = fused_relu_maxpool(fused.encrypt(Shape::hwc(4, 4, 1), v), 2, 2, fused.ctx);
  auto r = secure_relu(unfused.encrypt(Shape::hwc(4, 4, 1), v), unfused.ctx);
  auto b = secure_maxpool(r, 2, 2, unfused.ctx);
  auto oracle = maxpool_oracle(relu_oracle(v), 4, 4, 1, 2, 2);
  EXPECT_EQ(fused.decrypt(a), oracle);
  EXPECT_EQ(unfused.decrypt(b), oracle);
  EXPECT_EQ(fused.ctr.comparisons, 4u * 4u);
  EXPECT_EQ(unfused.ctr.comparisons, 4u * 7u);
}

TEST(Protocols, ZeroCountVisibleToClient) {
  Harness h(17);
  h.channel.keep_transcript(true);
  std::vector<std::int64_t> v{0, 3, 0, -4, 5, 0, 1, -1};
  auto x = h.encrypt(Shape::flat(v.size()), v);
  auto blinded = server_blind_relu(x.cells, x.bound, h.ctx);
  std::size_t zero_dummies = 0;
  for (const auto& d : blinded.record.dummy_values) zero_dummies += d == 0 ? 1 : 0;
  std::size_t client_zeros = 0;
  for (const auto& c : blinded.batch.cells) {
    client_zeros += decrypt(c, h.keys.sec, h.keys.pub) == 0 ? 1 : 0;
  }
  EXPECT_EQ(client_zeros, 3u + zero_dummies);
}

TEST(Protocols, PermutationIsUniform) {
  // Destination of source slot 0 over many seeds; chi-square with 9 dof.
  constexpr std::size_t kSlots = 10, kRuns = 10000;
  std::vector<std::size_t> counts(kSlots, 0);
  for (std::size_t run = 0; run < kRuns; ++run) {
    Prg prg(derive_seed(seed_from_u64(99), "perm", run));
    auto perm = random_permutation(kSlots, prg);
    auto inv = invert_permutation(perm);
    counts[inv[0]]++;
  }
  double chi = 0;
  const double expected = static_cast<double>(kRuns) / kSlots;
  for (auto c : counts) chi += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi, 27.88);  // chi-square(9) at p = 0.001
}

TEST(Protocols, BlindedValuesDoNotRepeatAcrossRuns) {
  std::set<std::string> seen;
  for (std::uint64_t run = 0; run < 20; ++run) {
    Harness h(1000 + run);
    h.cfg.hooks.identity_permutation = true;
    h.cfg.hooks.no_dummies = true;
    auto x = h.encrypt(Shape::flat(1), {37});
    auto blinded = server_blind_relu(x.cells, x.bound, h.ctx);
    seen.insert(h.codec.decode(decrypt(blinded.batch.cells[0], h.keys.sec, h.keys.pub)).get_str());
  }
  EXPECT_EQ(seen.size(), 20u);
}

TEST(Protocols, HooksRejectedWithoutHookBuild) {
  ProtocolConfig cfg;
  cfg.hooks.identity_permutation = true;
  if (test_hooks_enabled()) {
    EXPECT_NO_THROW(cfg.validate());
  } else {
    EXPECT_THROW(cfg.validate(), ConfigError);
  }
}

}  // namespace
}  // namespace popcorn
