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

#include "popcorn/linear.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>

#include "popcorn/error.hpp"
#include "popcorn/parallel.hpp"

namespace popcorn {

OpCounter& OpCounter::operator+=(const OpCounter& o) {
  hmul_plain += o.hmul_plain;
  bias_hmul_plain += o.bias_hmul_plain;
  hadd += o.hadd;
  comparisons += o.comparisons;
  dummy_slots += o.dummy_slots;
  pair_diff_muladds += o.pair_diff_muladds;
  ciphertexts_sent += o.ciphertexts_sent;
  ciphertexts_received += o.ciphertexts_received;
  rounds += o.rounds;
  return *this;
}

OpCounter operator-(const OpCounter& a, const OpCounter& b) {
  OpCounter d;
  d.hmul_plain = a.hmul_plain - b.hmul_plain;
  d.bias_hmul_plain = a.bias_hmul_plain - b.bias_hmul_plain;
  d.hadd = a.hadd - b.hadd;
  d.comparisons = a.comparisons - b.comparisons;
  d.dummy_slots = a.dummy_slots - b.dummy_slots;
  d.pair_diff_muladds = a.pair_diff_muladds - b.pair_diff_muladds;
  d.ciphertexts_sent = a.ciphertexts_sent - b.ciphertexts_sent;
  d.ciphertexts_received = a.ciphertexts_received - b.ciphertexts_received;
  d.rounds = a.rounds - b.rounds;
  return d;
}

namespace {

mpz_class to_mpz(std::int64_t v) {
  mpz_class out;
  mpz_set_si(out.get_mpz_t(), v);
  return out;
}

void check_input(const EncTensor& x, const Layer& layer) {
  if (!layer.spec.is_linear() || !layer.weights) {
    throw ShapeError(std::string("not a linear layer: ") + to_string(layer.spec.kind));
  }
  if (!(x.shape == layer.spec.input)) {
    throw ShapeError("linear layer expects " + layer.spec.input.str() + ", got " +
                     x.shape.str());
  }
  if (x.cells.size() != x.shape.size()) throw ShapeError("tensor cell count mismatch");
  if (layer.bias.size() != layer.spec.bias_count()) throw ShapeError("bias count mismatch");
}

/// One ciphertext per output channel: E(1)^b_k.
std::vector<Ciphertext> bias_ciphertexts(const Layer& layer, LinearContext& ctx) {
  std::vector<Ciphertext> out;
  out.reserve(layer.bias.size());
  for (std::int64_t b : layer.bias) out.push_back(hmul_plain(ctx.enc_one, b, ctx.pk, ctx.prg));
  ctx.ctr.bias_hmul_plain += layer.bias.size();
  return out;
}

EncTensor make_output(const EncTensor& x, const Layer& layer, LinearContext& ctx) {
  EncTensor out;
  out.shape = layer.spec.output();
  out.scale_exp = x.scale_exp + layer.weight_scale_exp;
  out.bound = certify_linear_bound(layer, x.bound, ctx.codec);
  out.cells.assign(out.shape.size(), Ciphertext{0});
  return out;
}

bool wanted(const std::vector<bool>* needed, std::size_t o) {
  return needed == nullptr || (*needed)[o];
}

/// Products of (input, multiplier) shared across outputs, then per-output
/// accumulation on top of the bias ciphertext.
struct TermPlan {
  std::vector<std::pair<std::size_t, std::int64_t>> products;
  std::vector<std::vector<std::uint32_t>> terms;  // per output
};

EncTensor run_term_plan(const EncTensor& x, const Layer& layer, const TermPlan& plan,
                        const std::vector<bool>* needed, LinearContext& ctx) {
  EncTensor out = make_output(x, layer, ctx);
  const auto bias = bias_ciphertexts(layer, ctx);
  std::vector<Ciphertext> products(plan.products.size());
  parallel_for(products.size(), [&](std::size_t p) {
    const auto& [in, mult] = plan.products[p];
    // Multipliers are nonzero, so no fresh randomness is drawn here.
    Prg unused(Seed{});
    products[p] = hmul_plain(x.cells[in], mult, ctx.pk, unused);
  });
  ctx.ctr.hmul_plain += products.size();
  const std::size_t channels = layer.spec.bias_count();
  std::uint64_t adds = 0;
  for (std::size_t o = 0; o < out.cells.size(); ++o) {
    if (wanted(needed, o)) adds += plan.terms[o].size();
  }
  parallel_for(out.cells.size(), [&](std::size_t o) {
    if (!wanted(needed, o)) return;
    Ciphertext acc = bias[o % channels];
    for (std::uint32_t p : plan.terms[o]) acc = hadd(acc, products[p], ctx.pk);
    out.cells[o] = std::move(acc);
  });
  ctx.ctr.hadd += adds;
  return out;
}

TermPlan build_term_plan(const Layer& layer, const std::vector<bool>* needed) {
  TermPlan plan;
  plan.terms.resize(layer.spec.output().size());
  if (const auto* pc = std::get_if<PrunedCodebook>(&*layer.weights)) {
    std::vector<std::int32_t> id_of(pc->dense_size, -1);
    for (std::size_t i = 0; i < pc->indices.size(); ++i) id_of[pc->indices[i]] = pc->codeword_ids[i];
    std::unordered_map<std::uint64_t, std::uint32_t> product_of;
    for_each_connection(layer.spec, [&](std::size_t o, std::size_t in, std::size_t wi) {
      if (id_of[wi] < 0 || !wanted(needed, o)) return;
      const std::uint64_t key = (static_cast<std::uint64_t>(in) << 16) |
                                static_cast<std::uint64_t>(id_of[wi]);
      auto [it, inserted] =
          product_of.try_emplace(key, static_cast<std::uint32_t>(plan.products.size()));
      if (inserted) plan.products.emplace_back(in, pc->codebook[static_cast<std::size_t>(id_of[wi])]);
      plan.terms[o].push_back(it->second);
    });
    return plan;
  }
  const auto& dense = std::get<DenseInt>(*layer.weights).values;
  for_each_connection(layer.spec, [&](std::size_t o, std::size_t in, std::size_t wi) {
    if (dense[wi] == 0 || !wanted(needed, o)) return;
    plan.terms[o].push_back(static_cast<std::uint32_t>(plan.products.size()));
    plan.products.emplace_back(in, dense[wi]);
  });
  return plan;
}

/// Receptive field of each output position: (input index, offset within a
/// filter). Shared by all filters at that position.
std::vector<std::vector<std::pair<std::size_t, std::size_t>>> receptive_fields(
    const LayerSpec& spec) {
  const std::size_t channels = spec.bias_count();
  const std::size_t positions = spec.output().size() / channels;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> rf(positions);
  for_each_connection(spec, [&](std::size_t o, std::size_t in, std::size_t wi) {
    if (o % channels == 0) rf[o / channels].emplace_back(in, wi);
  });
  return rf;
}

Ciphertext sum_cells(const EncTensor& x, const std::vector<std::size_t>& cells,
                     LinearContext& ctx) {
  Ciphertext acc = x.cells[cells.front()];
  for (std::size_t i = 1; i < cells.size(); ++i) acc = hadd(acc, x.cells[cells[i]], ctx.pk);
  ctx.ctr.hadd += cells.size() - 1;
  return acc;
}

}  // namespace

mpz_class certify_linear_bound(const Layer& layer, const mpz_class& input_bound,
                               const SignedCodec& codec) {
  const auto dense = expand(*layer.weights);
  const std::size_t channels = layer.spec.bias_count();
  const std::size_t fan_in = layer.spec.fan_in();
  mpz_class worst = 0;
  for (std::size_t k = 0; k < channels; ++k) {
    mpz_class row = 0;
    for (std::size_t j = 0; j < fan_in; ++j) row += abs(to_mpz(dense[k * fan_in + j]));
    mpz_class total = row * input_bound + abs(to_mpz(layer.bias[k]));
    if (total > worst) worst = total;
  }
  if (worst < 1) worst = 1;
  codec.check_plain(worst, "linear layer output bound");
  return worst;
}

EncTensor eval_linear(const EncTensor& x, const Layer& layer, LinearContext& ctx,
                      const std::vector<bool>* needed) {
  check_input(x, layer);
  if (std::holds_alternative<BinaryWeights>(*layer.weights)) {
    return eval_binarized(x, layer, ctx, needed);
  }
  if (layer.spec.kind == LayerKind::kConv) return eval_conv(x, layer, ctx, needed);
  return eval_fc(x, layer, ctx);
}

EncTensor eval_fc(const EncTensor& x, const Layer& layer, LinearContext& ctx) {
  check_input(x, layer);
  if (layer.spec.kind != LayerKind::kFc) throw ShapeError("eval_fc on a non-fc layer");
  if (std::holds_alternative<BinaryWeights>(*layer.weights)) return eval_binarized(x, layer, ctx);
  return run_term_plan(x, layer, build_term_plan(layer, nullptr), nullptr, ctx);
}

EncTensor eval_conv(const EncTensor& x, const Layer& layer, LinearContext& ctx,
                    const std::vector<bool>* needed) {
  check_input(x, layer);
  if (layer.spec.kind != LayerKind::kConv) throw ShapeError("eval_conv on a non-conv layer");
  if (std::holds_alternative<BinaryWeights>(*layer.weights)) {
    return eval_binarized(x, layer, ctx, needed);
  }
  return run_term_plan(x, layer, build_term_plan(layer, needed), needed, ctx);
}

EncTensor eval_binarized(const EncTensor& x, const Layer& layer, LinearContext& ctx,
                         const std::vector<bool>* needed) {
  check_input(x, layer);
  const auto* bw = std::get_if<BinaryWeights>(&*layer.weights);
  if (bw == nullptr) throw ConfigError("eval_binarized needs binary weights");
  EncTensor out = make_output(x, layer, ctx);
  const auto bias = bias_ciphertexts(layer, ctx);
  const std::size_t channels = layer.spec.bias_count();
  const std::size_t fan_in = layer.spec.fan_in();
  const auto fields = receptive_fields(layer.spec);

  for (std::size_t pos = 0; pos < fields.size(); ++pos) {
    bool any = false;
    for (std::size_t k = 0; k < channels; ++k) any = any || wanted(needed, pos * channels + k);
    if (!any) continue;
    const auto& rf = fields[pos];
    std::vector<std::size_t> all;
    all.reserve(rf.size());
    for (const auto& [in, off] : rf) all.push_back(in);
    const Ciphertext total = sum_cells(x, all, ctx);  // S, shared by every filter

    for (std::size_t k = 0; k < channels; ++k) {
      const std::size_t o = pos * channels + k;
      if (!wanted(needed, o)) continue;
      std::vector<std::size_t> plus, minus;
      for (const auto& [in, off] : rf) {
        (bw->plus[k * fan_in + off] ? plus : minus).push_back(in);
      }
      Ciphertext value;
      if (plus.size() <= minus.size()) {
        // a.x = 2 * sum(+1 inputs) - S
        if (plus.empty()) {
          value = hneg(total, ctx.pk);
          ctx.ctr.hadd += 1;
        } else {
          Ciphertext p = sum_cells(x, plus, ctx);
          value = hsub(hadd(p, p, ctx.pk), total, ctx.pk);
          ctx.ctr.hadd += 2;
        }
      } else {
        // a.x = S - 2 * sum(-1 inputs)
        if (minus.empty()) {
          value = total;
        } else {
          Ciphertext m = sum_cells(x, minus, ctx);
          value = hsub(hsub(total, m, ctx.pk), m, ctx.pk);
          ctx.ctr.hadd += 2;
        }
      }
      out.cells[o] = hadd(value, bias[k], ctx.pk);
      ctx.ctr.hadd += 1;
    }
  }
  return out;
}

EncTensor eval_binarized_naive(const EncTensor& x, const Layer& layer, LinearContext& ctx) {
  check_input(x, layer);
  const auto* bw = std::get_if<BinaryWeights>(&*layer.weights);
  if (bw == nullptr) throw ConfigError("eval_binarized_naive needs binary weights");
  EncTensor out = make_output(x, layer, ctx);
  const auto bias = bias_ciphertexts(layer, ctx);
  const std::size_t channels = layer.spec.bias_count();
  for (std::size_t o = 0; o < out.cells.size(); ++o) out.cells[o] = bias[o % channels];
  std::uint64_t adds = 0;
  for_each_connection(layer.spec, [&](std::size_t o, std::size_t in, std::size_t wi) {
    out.cells[o] = bw->plus[wi] ? hadd(out.cells[o], x.cells[in], ctx.pk)
                                : hsub(out.cells[o], x.cells[in], ctx.pk);
    ++adds;
  });
  ctx.ctr.hadd += adds;
  return out;
}

bool ConvPair::adjacent() const {
  auto diff = [](std::size_t a, std::size_t b) { return a > b ? a - b : b - a; };
  const std::size_t dy = diff(iy, jy);
  const std::size_t dx = diff(ix, jx);
  return (dy == 0 && dx == 1) || (dy == 1 && dx == 0);
}

ConvDiffPlan plan_conv_diffs(const LayerSpec& conv, std::size_t pool_window,
                             std::size_t pool_stride, Prg* prg) {
  if (conv.kind != LayerKind::kConv) throw ShapeError("plan_conv_diffs needs a conv layer");
  if (pool_stride != pool_window) {
    throw ConfigError("difference kernel needs non-overlapping pooling windows");
  }
  const Shape pooled = LayerSpec::maxpool(conv.output(), pool_window, pool_stride).output();
  ConvDiffPlan plan;
  plan.conv = conv;
  plan.pool_window = pool_window;
  plan.pool_stride = pool_stride;
  plan.pooled_h = pooled.height();
  plan.pooled_w = pooled.width();
  plan.pairs.resize(plan.pooled_h * plan.pooled_w);
  plan.carry.resize(plan.pairs.size());

  const std::size_t t = pool_window;
  for (std::size_t py = 0; py < plan.pooled_h; ++py) {
    for (std::size_t px = 0; px < plan.pooled_w; ++px) {
      const std::size_t w = py * plan.pooled_w + px;
      const bool column_wise = prg != nullptr && prg->coin();
      // Cell (a, b) of the window in the chosen orientation.
      auto at = [&](std::size_t a, std::size_t b) {
        return column_wise ? std::pair{py * pool_stride + b, px * pool_stride + a}
                           : std::pair{py * pool_stride + a, px * pool_stride + b};
      };
      std::vector<std::pair<std::size_t, std::size_t>> leftovers;
      for (std::size_t a = 0; a < t; ++a) {
        for (std::size_t b = 0; b + 1 < t; b += 2) {
          auto [y0, x0] = at(a, b);
          auto [y1, x1] = at(a, b + 1);
          ConvPair p{y0, x0, y1, x1};
          if (prg != nullptr && prg->coin()) p = ConvPair{y1, x1, y0, x0};
          plan.pairs[w].push_back(p);
        }
        if (t % 2 == 1) leftovers.push_back(at(a, t - 1));
      }
      // Odd windows: the last column pairs up vertically, one cell carries.
      for (std::size_t i = 0; i + 1 < leftovers.size(); i += 2) {
        ConvPair p{leftovers[i].first, leftovers[i].second, leftovers[i + 1].first,
                   leftovers[i + 1].second};
        if (prg != nullptr && prg->coin()) {
          p = ConvPair{leftovers[i + 1].first, leftovers[i + 1].second,
                       leftovers[i].first, leftovers[i].second};
        }
        plan.pairs[w].push_back(p);
      }
      if (leftovers.size() % 2 == 1) plan.carry[w].push_back(leftovers.back());
    }
  }
  return plan;
}

namespace {

/// input index -> weight of filter `k` applied at output (oy, ox); padding
/// cells omitted.
std::map<std::size_t, std::int64_t> field_weights(const LayerSpec& s,
                                                  const std::vector<std::int64_t>& w,
                                                  std::size_t oy, std::size_t ox,
                                                  std::size_t k) {
  std::map<std::size_t, std::int64_t> out;
  const std::size_t in_h = s.input.height();
  const std::size_t in_w = s.input.width();
  for (std::size_t u = 0; u < s.kernel_h; ++u) {
    const std::size_t iy = oy * s.stride + u;
    if (iy < s.padding || iy - s.padding >= in_h) continue;
    for (std::size_t v = 0; v < s.kernel_w; ++v) {
      const std::size_t ix = ox * s.stride + v;
      if (ix < s.padding || ix - s.padding >= in_w) continue;
      for (std::size_t c = 0; c < s.input.channels(); ++c) {
        out[hwc_index(s.input, iy - s.padding, ix - s.padding, c)] =
            w[conv_weight_index(s, k, u, v, c)];
      }
    }
  }
  return out;
}

Ciphertext weighted_sum(const EncTensor& x, const std::vector<std::pair<std::size_t, std::int64_t>>& terms,
                        LinearContext& ctx) {
  if (terms.empty()) {
    ctx.ctr.hmul_plain += 1;
    return encrypt(0, ctx.pk, ctx.prg);
  }
  Ciphertext acc;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    Ciphertext prod = hmul_plain(x.cells[terms[t].first], terms[t].second, ctx.pk, ctx.prg);
    acc = t == 0 ? prod : hadd(acc, prod, ctx.pk);
  }
  ctx.ctr.hmul_plain += terms.size();
  ctx.ctr.hadd += terms.size() - 1;
  return acc;
}

void check_pair(const EncTensor& x, const Layer& conv, const ConvPair& pair,
                std::size_t channel) {
  if (conv.spec.kind != LayerKind::kConv || !conv.weights) {
    throw ShapeError("pair difference needs a conv layer");
  }
  if (!(x.shape == conv.spec.input)) throw ShapeError("pair difference input shape mismatch");
  if (channel >= conv.spec.out_c) throw ShapeError("pair difference channel out of range");
  const std::size_t oh = conv.spec.out_h(), ow = conv.spec.out_w();
  if (pair.iy >= oh || pair.jy >= oh || pair.ix >= ow || pair.jx >= ow) {
    throw ShapeError("pair position outside the conv output");
  }
}

}  // namespace

Ciphertext eval_pair_diff(const EncTensor& x, const Layer& conv, const ConvPair& pair,
                          std::size_t channel, LinearContext& ctx) {
  check_pair(x, conv, pair, channel);
  if (!pair.adjacent()) return eval_pair_diff_naive(x, conv, pair, channel, ctx);
  const auto w = expand(*conv.weights);
  auto a = field_weights(conv.spec, w, pair.iy, pair.ix, channel);
  auto b = field_weights(conv.spec, w, pair.jy, pair.jx, channel);
  std::map<std::size_t, std::int64_t> merged = a;
  for (const auto& [in, weight] : b) merged[in] -= weight;
  std::vector<std::pair<std::size_t, std::int64_t>> terms(merged.begin(), merged.end());
  ctx.ctr.pair_diff_muladds += terms.size();
  return weighted_sum(x, terms, ctx);
}

Ciphertext eval_pair_diff_naive(const EncTensor& x, const Layer& conv,
                                const ConvPair& pair, std::size_t channel,
                                LinearContext& ctx) {
  check_pair(x, conv, pair, channel);
  const auto w = expand(*conv.weights);
  auto a = field_weights(conv.spec, w, pair.iy, pair.ix, channel);
  auto b = field_weights(conv.spec, w, pair.jy, pair.jx, channel);
  std::vector<std::pair<std::size_t, std::int64_t>> ta(a.begin(), a.end());
  std::vector<std::pair<std::size_t, std::int64_t>> tb(b.begin(), b.end());
  ctx.ctr.pair_diff_muladds += ta.size() + tb.size();
  Ciphertext ci = weighted_sum(x, ta, ctx);
  Ciphertext cj = weighted_sum(x, tb, ctx);
  ctx.ctr.hadd += 1;
  return hsub(ci, cj, ctx.pk);
}

std::uint64_t pair_diff_cost(std::size_t w, std::size_t s) {
  if (s >= w) return pair_naive_cost(w);
  return static_cast<std::uint64_t>(w) * w + static_cast<std::uint64_t>(w) * s;
}

std::uint64_t pair_naive_cost(std::size_t w) { return 2 * static_cast<std::uint64_t>(w) * w; }

}  // namespace popcorn
