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

#include "popcorn/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "popcorn/error.hpp"
#include "popcorn/model.hpp"
#include "popcorn/parallel.hpp"

namespace popcorn {

bool test_hooks_enabled() {
#ifdef POPCORN_TEST_HOOKS
  return true;
#else
  return false;
#endif
}

std::size_t ProtocolConfig::dummy_count(std::size_t m) const {
  if (test_hooks_enabled() && hooks.no_dummies) return 0;
  const auto frac = static_cast<std::size_t>(std::ceil(dummy_fraction * static_cast<double>(m)));
  return std::max(min_dummies, frac);
}

void ProtocolConfig::validate() const {
  if (!(dummy_fraction >= 0.0 && dummy_fraction <= 1.0)) {
    throw ConfigError("dummy_fraction must lie in [0, 1]");
  }
  if (hooks.force_tau_sign < -1 || hooks.force_tau_sign > 1) {
    throw ConfigError("force_tau_sign must be -1, 0 or +1");
  }
  if (hooks.any() && !test_hooks_enabled()) {
    throw ConfigError("protocol test hooks are not available in this build");
  }
}

namespace {

/// Fresh encryptions of zero folded into each cell. Nonces are drawn in order
/// so the result does not depend on scheduling.
void rerandomize_all(std::vector<Ciphertext>& cells, ServerContext& ctx) {
  if (!ctx.cfg.rerandomize) return;
  std::vector<mpz_class> nonces(cells.size());
  for (auto& r : nonces) r = sample_unit(ctx.pk, ctx.prg);
  parallel_for(cells.size(), [&](std::size_t i) {
    cells[i] = hadd(cells[i], encrypt_with_nonce(0, ctx.pk, nonces[i]), ctx.pk);
  });
  ctx.ctr.hadd += cells.size();
}

std::vector<std::size_t> draw_permutation(std::size_t n, BlindingRecord& rec,
                                          ServerContext& ctx) {
  ctx.prg.fill(rec.shuffle_seed);
  if (test_hooks_enabled() && ctx.cfg.hooks.identity_permutation) {
    std::vector<std::size_t> id(n);
    std::iota(id.begin(), id.end(), std::size_t{0});
    return id;
  }
  Prg shuffle(rec.shuffle_seed);
  return random_permutation(n, shuffle);
}

/// |tau| uniform in [1, B_tau], invertible mod n; sign per `signed_tau`.
void draw_taus(std::size_t count, bool signed_tau, BlindingRecord& rec, ServerContext& ctx) {
  const mpz_class& n = ctx.pk.n();
  const TestHooks& hooks = ctx.cfg.hooks;
  const bool hooked = test_hooks_enabled();
  rec.taus.resize(count);
  rec.tau_invs.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    mpz_class tau;
    if (hooked && hooks.tau_one) {
      tau = 1;
    } else {
      do {
        tau = ctx.prg.uniform(ctx.codec.blind_bound()) + 1;
      } while (gcd(tau, n) != 1);
    }
    bool negative = signed_tau && ctx.prg.coin();
    if (hooked && hooks.force_tau_sign != 0) negative = signed_tau && hooks.force_tau_sign < 0;
    if (hooked && hooks.tau_one) negative = false;
    if (negative) tau = -tau;
    rec.tau_invs[i] = mod_inverse(tau, n);
    rec.taus[i] = std::move(tau);
  }
}

std::vector<Ciphertext> blind_slots(std::span<const Ciphertext> slots,
                                    const BlindingRecord& rec, ServerContext& ctx) {
  std::vector<Ciphertext> out(slots.size());
  parallel_for(slots.size(), [&](std::size_t i) {
    Prg unused(Seed{});  // tau != 0, so hmul_plain draws nothing
    out[i] = hmul_plain(slots[i], rec.taus[i], ctx.pk, unused);
  });
  ctx.ctr.hmul_plain += slots.size();
  rerandomize_all(out, ctx);
  return out;
}

std::vector<Ciphertext> exchange(const BlindedBatch& batch, ServerContext& ctx) {
  ctx.ctr.rounds += 1;
  ctx.ctr.ciphertexts_sent += batch.cells.size();
  auto responses = ctx.channel.round_trip(batch);
  ctx.ctr.ciphertexts_received += responses.size();
  if (responses.size() != batch.cells.size()) {
    throw ProtocolError(AbortReason::kShapeMismatch, "response length does not match batch");
  }
  for (const auto& c : responses) {
    try {
      check_ciphertext(c, ctx.pk);
    } catch (const DomainError&) {
      throw ProtocolError(AbortReason::kMalformedFrame, "response ciphertext out of range");
    }
  }
  return responses;
}

void check_record(std::span<const Ciphertext> responses, const BlindingRecord& rec,
                  RoundKind kind) {
  if (rec.kind != kind) throw ProtocolError(AbortReason::kProtocolOrder, "record kind mismatch");
  if (responses.size() != rec.permutation.size() || rec.taus.size() != rec.permutation.size()) {
    throw ProtocolError(AbortReason::kShapeMismatch, "responses do not match the record");
  }
}

}  // namespace

BlindedRelu server_blind_relu(std::span<const Ciphertext> x, const mpz_class& bound,
                              ServerContext& ctx) {
  ctx.cfg.validate();
  ctx.codec.check_plain(bound, "relu input bound");
  const std::size_t m = x.size();
  const std::size_t t = ctx.cfg.dummy_count(m);

  BlindedRelu out;
  BlindingRecord& rec = out.record;
  rec.kind = RoundKind::kRelu;
  rec.real_count = m;

  // Dummy plaintexts: zero with probability 1/2, else uniform in [1, bound].
  std::vector<mpz_class> dummies(t);
  std::vector<mpz_class> nonces(t);
  for (std::size_t d = 0; d < t; ++d) {
    if (!ctx.prg.coin()) dummies[d] = ctx.prg.uniform(bound) + 1;
    nonces[d] = sample_unit(ctx.pk, ctx.prg);
  }
  std::vector<Ciphertext> source(x.begin(), x.end());
  source.resize(m + t);
  parallel_for(t, [&](std::size_t d) {
    source[m + d] = encrypt_with_nonce(dummies[d], ctx.pk, nonces[d]);
  });

  rec.permutation = draw_permutation(m + t, rec, ctx);
  out.shuffled.resize(m + t);
  for (std::size_t s = 0; s < m + t; ++s) {
    const std::size_t src = rec.permutation[s];
    out.shuffled[s] = source[src];
    if (src >= m) {
      rec.dummy_slots.push_back(s);
      rec.dummy_values.push_back(dummies[src - m]);
    }
  }
  draw_taus(m + t, /*signed_tau=*/true, rec, ctx);

  out.batch.kind = RoundKind::kRelu;
  out.batch.cells = blind_slots(out.shuffled, rec, ctx);
  ctx.ctr.comparisons += m;
  ctx.ctr.dummy_slots += t;
  return out;
}

std::vector<Ciphertext> client_respond(const BlindedBatch& batch, const KeyPair& keys,
                                       const SignedCodec& codec, Prg& prg) {
  for (const auto& c : batch.cells) {
    try {
      check_ciphertext(c, keys.pub);
    } catch (const DomainError&) {
      throw ProtocolError(AbortReason::kMalformedFrame, "blinded ciphertext out of range");
    }
  }
  std::vector<mpz_class> nonces(batch.cells.size());
  for (auto& r : nonces) r = sample_unit(keys.pub, prg);
  std::vector<Ciphertext> out(batch.cells.size());
  parallel_for(out.size(), [&](std::size_t i) {
    const mpz_class y = codec.decode(decrypt(batch.cells[i], keys.sec, keys.pub));
    const mpz_class clamped = y > 0 ? y : mpz_class(0);
    out[i] = encrypt_with_nonce(clamped, keys.pub, nonces[i]);
  });
  return out;
}

std::vector<Ciphertext> server_unblind_relu(std::span<const Ciphertext> responses,
                                            const BlindingRecord& record,
                                            std::span<const Ciphertext> shuffled,
                                            ServerContext& ctx) {
  check_record(responses, record, RoundKind::kRelu);
  if (shuffled.size() != responses.size()) {
    throw ProtocolError(AbortReason::kShapeMismatch, "shuffled inputs do not match the record");
  }
  const std::size_t m = record.real_count;
  std::vector<Ciphertext> out(m);
  parallel_for(responses.size(), [&](std::size_t s) {
    const std::size_t src = record.permutation[s];
    if (src >= m) return;
    Prg unused(Seed{});
    Ciphertext v = hmul_plain(responses[s], record.tau_invs[s], ctx.pk, unused);
    // tau < 0: the client clamped -|tau| x, so v = -relu(-x) and
    // relu(x) = x - v.
    if (record.taus[s] < 0) v = hsub(shuffled[s], v, ctx.pk);
    out[src] = std::move(v);
  });
  ctx.ctr.hmul_plain += m;
  std::uint64_t real_negatives = 0;
  for (std::size_t s = 0; s < responses.size(); ++s) {
    if (record.permutation[s] < m && record.taus[s] < 0) ++real_negatives;
  }
  ctx.ctr.hadd += real_negatives;
  return out;
}

BlindedMax server_blind_max_pairs(std::span<const Ciphertext> diffs,
                                  const mpz_class& diff_bound, ServerContext& ctx) {
  ctx.cfg.validate();
  ctx.codec.check_plain(diff_bound, "max difference bound");
  BlindedMax out;
  BlindingRecord& rec = out.record;
  rec.kind = RoundKind::kMax;
  rec.real_count = diffs.size();
  rec.permutation = draw_permutation(diffs.size(), rec, ctx);
  std::vector<Ciphertext> slots(diffs.size());
  for (std::size_t s = 0; s < slots.size(); ++s) slots[s] = diffs[rec.permutation[s]];
  draw_taus(slots.size(), /*signed_tau=*/false, rec, ctx);
  out.batch.kind = RoundKind::kMax;
  out.batch.cells = blind_slots(slots, rec, ctx);
  ctx.ctr.comparisons += diffs.size();
  return out;
}

std::vector<Ciphertext> server_unblind_max(std::span<const Ciphertext> responses,
                                           const BlindingRecord& record,
                                           std::span<const Ciphertext> xj,
                                           ServerContext& ctx) {
  check_record(responses, record, RoundKind::kMax);
  if (xj.size() != responses.size()) {
    throw ProtocolError(AbortReason::kShapeMismatch, "subtrahends do not match the record");
  }
  std::vector<Ciphertext> out(responses.size());
  parallel_for(responses.size(), [&](std::size_t s) {
    const std::size_t k = record.permutation[s];
    Prg unused(Seed{});
    out[k] = hadd(xj[k], hmul_plain(responses[s], record.tau_invs[s], ctx.pk, unused), ctx.pk);
  });
  ctx.ctr.hmul_plain += responses.size();
  ctx.ctr.hadd += responses.size();
  return out;
}

EncTensor secure_relu(const EncTensor& x, ServerContext& ctx) {
  auto blinded = server_blind_relu(x.cells, x.bound, ctx);
  auto responses = exchange(blinded.batch, ctx);
  EncTensor out;
  out.shape = x.shape;
  out.scale_exp = x.scale_exp;
  out.bound = x.bound;
  out.cells = server_unblind_relu(responses, blinded.record, blinded.shuffled, ctx);
  return out;
}

std::size_t tournament_rounds(std::size_t m) {
  std::size_t rounds = 0;
  while (m > 1) {
    m = (m + 1) / 2;
    ++rounds;
  }
  return rounds;
}

std::vector<std::vector<Ciphertext>> pooling_windows(const EncTensor& x, std::size_t t,
                                                     std::size_t s) {
  const LayerSpec spec = LayerSpec::maxpool(x.shape, t, s);
  spec.validate();
  if (x.cells.size() != x.shape.size()) throw ShapeError("tensor cell count mismatch");
  const Shape pooled = spec.output();
  std::vector<std::vector<Ciphertext>> windows(pooled.size());
  for (std::size_t py = 0; py < pooled.height(); ++py) {
    for (std::size_t px = 0; px < pooled.width(); ++px) {
      for (std::size_t c = 0; c < pooled.channels(); ++c) {
        auto& w = windows[hwc_index(pooled, py, px, c)];
        w.reserve(t * t);
        for (std::size_t u = 0; u < t; ++u) {
          for (std::size_t v = 0; v < t; ++v) {
            w.push_back(x.cells[hwc_index(x.shape, py * s + u, px * s + v, c)]);
          }
        }
      }
    }
  }
  return windows;
}

std::vector<Ciphertext> max_tournament(std::vector<std::vector<Ciphertext>> windows,
                                       const mpz_class& bound, ServerContext& ctx,
                                       std::vector<WindowFirstRound>* first) {
  if (first != nullptr && first->size() != windows.size()) {
    throw ShapeError("first-round plan does not cover every window");
  }
  const mpz_class diff_bound = 2 * bound;
  bool use_first = first != nullptr;
  for (;;) {
    std::vector<Ciphertext> diffs, xj;
    std::vector<std::size_t> owner;  // pair -> window
    std::vector<std::vector<Ciphertext>> carry(windows.size());
    if (use_first) {
      for (std::size_t w = 0; w < windows.size(); ++w) {
        auto& f = (*first)[w];
        if (f.diffs.size() != f.xj.size()) throw ShapeError("first-round plan is ragged");
        for (std::size_t k = 0; k < f.diffs.size(); ++k) {
          diffs.push_back(std::move(f.diffs[k]));
          xj.push_back(std::move(f.xj[k]));
          owner.push_back(w);
        }
        carry[w] = std::move(f.carry);
      }
      use_first = false;
    } else {
      std::vector<std::pair<const Ciphertext*, const Ciphertext*>> pairs;
      for (std::size_t w = 0; w < windows.size(); ++w) {
        auto& cand = windows[w];
        if (cand.size() < 2) {
          carry[w] = std::move(cand);
          continue;
        }
        std::vector<std::size_t> order(cand.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (!(test_hooks_enabled() && ctx.cfg.hooks.identity_permutation)) {
          order = random_permutation(cand.size(), ctx.prg);
        }
        for (std::size_t k = 0; k + 1 < order.size(); k += 2) {
          pairs.emplace_back(&cand[order[k]], &cand[order[k + 1]]);
          owner.push_back(w);
        }
        if (order.size() % 2 == 1) carry[w].push_back(cand[order.back()]);
      }
      if (pairs.empty()) {
        windows = std::move(carry);
        break;
      }
      diffs.resize(pairs.size());
      xj.resize(pairs.size());
      parallel_for(pairs.size(), [&](std::size_t k) {
        diffs[k] = hsub(*pairs[k].first, *pairs[k].second, ctx.pk);
        xj[k] = *pairs[k].second;
      });
      ctx.ctr.hadd += pairs.size();
    }
    if (diffs.empty()) {
      windows = std::move(carry);
      if (std::all_of(windows.begin(), windows.end(),
                      [](const auto& w) { return w.size() <= 1; })) {
        break;
      }
      continue;
    }
    auto blinded = server_blind_max_pairs(diffs, diff_bound, ctx);
    auto responses = exchange(blinded.batch, ctx);
    auto winners = server_unblind_max(responses, blinded.record, xj, ctx);
    windows = std::move(carry);
    for (std::size_t k = 0; k < winners.size(); ++k) {
      windows[owner[k]].push_back(std::move(winners[k]));
    }
  }
  std::vector<Ciphertext> out;
  out.reserve(windows.size());
  for (auto& w : windows) {
    if (w.size() != 1) throw ShapeError("tournament left a window unresolved");
    out.push_back(std::move(w.front()));
  }
  return out;
}

namespace {

EncTensor pooled_tensor(const EncTensor& x, std::size_t t, std::size_t s, ServerContext& ctx,
                        std::vector<WindowFirstRound>* first) {
  EncTensor pooled;
  pooled.shape = LayerSpec::maxpool(x.shape, t, s).output();
  pooled.scale_exp = x.scale_exp;
  pooled.bound = x.bound;
  // With a precomputed first round the cells of x are not read; only the
  // window count matters.
  auto windows = first != nullptr ? std::vector<std::vector<Ciphertext>>(pooled.shape.size())
                                  : pooling_windows(x, t, s);
  pooled.cells = max_tournament(std::move(windows), x.bound, ctx, first);
  return pooled;
}

}  // namespace

EncTensor secure_maxpool(const EncTensor& x, std::size_t t, std::size_t s,
                         ServerContext& ctx, std::vector<WindowFirstRound>* first) {
  return pooled_tensor(x, t, s, ctx, first);
}

EncTensor fused_relu_maxpool(const EncTensor& x, std::size_t t, std::size_t s,
                             ServerContext& ctx, std::vector<WindowFirstRound>* first) {
  return secure_relu(pooled_tensor(x, t, s, ctx, first), ctx);
}

std::vector<Ciphertext> LocalClientChannel::round_trip(const BlindedBatch& batch) {
  if (keep_) seen_.push_back(batch);
  return client_respond(batch, keys_, codec_, prg_);
}

}  // namespace popcorn
