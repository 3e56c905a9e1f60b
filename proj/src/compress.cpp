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

#include "popcorn/compress.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "popcorn/error.hpp"
#include "popcorn/random.hpp"

namespace popcorn {
namespace {

double uniform01(Prg& prg) {
  return static_cast<double>(prg.next_u64() >> 11) * 0x1.0p-53;
}

double uniform_in(Prg& prg, double lo, double hi) {
  return lo + (hi - lo) * uniform01(prg);
}

}  // namespace

void RealModel::validate() const {
  Shape current = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const RealLayer& l = layers[i];
    l.spec.validate();
    if (!(l.spec.input == current)) {
      throw ShapeError("layer " + std::to_string(i) + " input " + l.spec.input.str() +
                       " does not follow " + current.str());
    }
    if (l.spec.is_linear()) {
      if (l.weights.size() != l.spec.weight_count()) {
        throw ShapeError("layer " + std::to_string(i) + " weight count mismatch");
      }
      if (l.bias.size() != l.spec.bias_count()) {
        throw ShapeError("layer " + std::to_string(i) + " bias count mismatch");
      }
      if (l.bn && l.bn->channels() != l.spec.bias_count()) {
        throw ShapeError("layer " + std::to_string(i) + " batch-norm channel mismatch");
      }
    }
    current = l.spec.output();
  }
}

RealLayer fold_bn(const RealLayer& linear, const BNParams& bn) {
  const std::size_t channels = linear.spec.bias_count();
  if (!linear.spec.is_linear()) throw ShapeError("fold_bn: layer is not linear");
  if (bn.channels() != channels || bn.beta.size() != channels ||
      bn.mean.size() != channels || bn.var.size() != channels) {
    throw ShapeError("fold_bn: " + std::to_string(bn.channels()) +
                     " batch-norm channels for " + std::to_string(channels) +
                     " outputs");
  }
  RealLayer out = linear;
  out.bn.reset();
  const std::size_t per_channel = linear.spec.fan_in();
  for (std::size_t k = 0; k < channels; ++k) {
    const double denom = bn.var[k] + bn.eps;
    if (!(denom > 0)) throw DomainError("fold_bn: var + eps must be positive");
    const double scale = bn.gamma[k] / std::sqrt(denom);
    for (std::size_t j = 0; j < per_channel; ++j) out.weights[k * per_channel + j] *= scale;
    out.bias[k] = (linear.bias[k] - bn.mean[k]) * scale + bn.beta[k];
  }
  return out;
}

std::vector<double> real_layer(const RealLayer& layer, std::span<const double> x) {
  const LayerSpec& s = layer.spec;
  if (x.size() != s.input.size()) throw ShapeError("real_layer: input size mismatch");
  switch (s.kind) {
    case LayerKind::kConv:
    case LayerKind::kFc: {
      std::vector<double> out(s.output().size(), 0.0);
      for_each_connection(s, [&](std::size_t o, std::size_t i, std::size_t wi) {
        out[o] += layer.weights[wi] * x[i];
      });
      const std::size_t channels = s.bias_count();
      for (std::size_t o = 0; o < out.size(); ++o) {
        const std::size_t k = o % channels;
        out[o] += layer.bias[k];
        if (layer.bn) {
          const BNParams& bn = *layer.bn;
          out[o] = bn.gamma[k] * (out[o] - bn.mean[k]) / std::sqrt(bn.var[k] + bn.eps) +
                   bn.beta[k];
        }
      }
      return out;
    }
    case LayerKind::kRelu: {
      std::vector<double> out(x.begin(), x.end());
      for (auto& v : out) v = std::max(v, 0.0);
      return out;
    }
    case LayerKind::kMaxPool: {
      const Shape out_shape = s.output();
      std::vector<double> out(out_shape.size());
      for (std::size_t oy = 0; oy < out_shape.height(); ++oy) {
        for (std::size_t ox = 0; ox < out_shape.width(); ++ox) {
          for (std::size_t c = 0; c < out_shape.channels(); ++c) {
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t dy = 0; dy < s.window; ++dy) {
              for (std::size_t dx = 0; dx < s.window; ++dx) {
                best = std::max(best, x[hwc_index(s.input, oy * s.stride + dy,
                                                  ox * s.stride + dx, c)]);
              }
            }
            out[hwc_index(out_shape, oy, ox, c)] = best;
          }
        }
      }
      return out;
    }
    case LayerKind::kFlatten:
      return std::vector<double>(x.begin(), x.end());
  }
  throw ShapeError("unknown layer kind");
}

std::vector<double> real_forward(const RealModel& model, std::span<const double> input) {
  std::vector<double> x(input.begin(), input.end());
  for (const RealLayer& layer : model.layers) x = real_layer(layer, x);
  return x;
}

std::vector<bool> prune_magnitude(std::span<const double> weights, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("prune ratio must be in [0, 1)");
  const std::size_t remove =
      static_cast<std::size_t>(std::floor(ratio * static_cast<double>(weights.size())));
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::fabs(weights[a]) < std::fabs(weights[b]);
  });
  std::vector<bool> keep(weights.size(), true);
  for (std::size_t i = 0; i < remove; ++i) keep[order[i]] = false;
  return keep;
}

KMeansResult kmeans_1d(std::span<const double> values, std::size_t k,
                       std::uint64_t seed) {
  KMeansResult result;
  if (values.empty()) return result;
  std::vector<double> distinct(values.begin(), values.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  k = std::clamp<std::size_t>(k, 1, distinct.size());

  auto nearest = [](const std::vector<double>& centers, double v) {
    std::size_t best = 0;
    double best_d = std::fabs(v - centers[0]);
    for (std::size_t c = 1; c < centers.size(); ++c) {
      double d = std::fabs(v - centers[c]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    return best;
  };

  std::vector<double> centers;
  if (k == distinct.size()) {
    centers = distinct;
  } else {
    // k-means++ seeding over the distinct values.
    Prg prg(derive_seed(seed_from_u64(seed), "kmeans++"));
    centers.push_back(distinct[prg.uniform(distinct.size())]);
    std::vector<double> d2(distinct.size());
    while (centers.size() < k) {
      double total = 0;
      for (std::size_t i = 0; i < distinct.size(); ++i) {
        double d = distinct[i] - centers[nearest(centers, distinct[i])];
        d2[i] = d * d;
        total += d2[i];
      }
      double target = uniform01(prg) * total;
      std::size_t pick = distinct.size() - 1;
      for (std::size_t i = 0; i < distinct.size(); ++i) {
        if (d2[i] <= 0) continue;
        if (target < d2[i]) {
          pick = i;
          break;
        }
        target -= d2[i];
      }
      while (d2[pick] <= 0 && pick > 0) --pick;
      centers.push_back(distinct[pick]);
    }
    std::sort(centers.begin(), centers.end());
  }

  result.assignment.assign(values.size(), 0);
  for (int iter = 1; iter <= 100; ++iter) {
    result.iterations = iter;
    for (std::size_t i = 0; i < values.size(); ++i) {
      result.assignment[i] = nearest(centers, values[i]);
    }
    std::vector<double> sum(centers.size(), 0.0);
    std::vector<std::size_t> count(centers.size(), 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      sum[result.assignment[i]] += values[i];
      ++count[result.assignment[i]];
    }
    double shift = 0;
    for (std::size_t c = 0; c < centers.size(); ++c) {
      if (count[c] == 0) continue;  // empty cluster keeps its center
      double next = sum[c] / static_cast<double>(count[c]);
      shift = std::max(shift, std::fabs(next - centers[c]));
      centers[c] = next;
    }
    if (shift <= 1e-9) break;
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    result.assignment[i] = nearest(centers, values[i]);
  }
  result.centroids = centers;
  return result;
}

CodebookResult quantize_codebook(std::span<const double> weights,
                                 const std::vector<bool>& mask, unsigned bits,
                                 int scale_exp, std::uint64_t seed) {
  if (bits < 1 || bits > 12) throw ConfigError("codebook bits must be in [1, 12]");
  if (mask.size() != weights.size()) throw ShapeError("mask size mismatch");
  std::vector<std::size_t> kept;
  std::vector<double> values;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (mask[i]) {
      kept.push_back(i);
      values.push_back(weights[i]);
    }
  }
  CodebookResult out;
  out.weights.dense_size = weights.size();
  out.weights.bits = bits;
  if (values.empty()) return out;

  KMeansResult km = kmeans_1d(values, std::size_t{1} << bits, seed);
  out.centroids = km.centroids;

  // Integerize codewords; merge duplicates and drop zeros.
  std::map<std::int64_t, std::uint16_t> id_of_value;
  std::vector<std::int32_t> remap(km.centroids.size(), -1);
  for (std::size_t c = 0; c < km.centroids.size(); ++c) {
    const std::int64_t q = quantize_fixed(km.centroids[c], scale_exp);
    if (q == 0) continue;
    auto [it, inserted] =
        id_of_value.try_emplace(q, static_cast<std::uint16_t>(out.weights.codebook.size()));
    if (inserted) out.weights.codebook.push_back(q);
    remap[c] = it->second;
  }
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const std::int32_t id = remap[km.assignment[i]];
    if (id < 0) continue;
    out.weights.indices.push_back(static_cast<std::uint32_t>(kept[i]));
    out.weights.codeword_ids.push_back(static_cast<std::uint16_t>(id));
  }
  return out;
}

BinaryWeights binarize(std::span<const double> weights) {
  BinaryWeights out;
  out.plus.reserve(weights.size());
  for (double w : weights) out.plus.push_back(w >= 0.0);
  return out;
}

DenseInt integerize(std::span<const double> weights, int scale_exp) {
  DenseInt out;
  out.values.reserve(weights.size());
  for (double w : weights) out.values.push_back(quantize_fixed(w, scale_exp));
  return out;
}

std::string PruneQuantReport::to_csv() const {
  std::ostringstream os;
  os << "layer,kind,input_dim,ciphertexts_per_weight,weights_per_ciphertext,"
        "prune_rank,quantize_rank,prune_ratio,bits,variant,muladd_before,muladd_after\n";
  for (const auto& r : rows) {
    os << r.layer << ',' << to_string(r.kind) << ',' << r.input_dim << ','
       << r.ciphertexts_per_weight << ',' << r.weights_per_ciphertext << ','
       << r.prune_rank << ',' << r.quantize_rank << ',' << r.prune_ratio << ','
       << r.bits << ',' << r.variant << ',' << r.muladd_before << ','
       << r.muladd_after << '\n';
  }
  return os.str();
}

namespace {

PruneQuantReport priority_from_specs(const std::vector<LayerSpec>& specs) {
  PruneQuantReport report;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    if (!s.is_linear()) continue;
    LayerPriority row;
    row.layer = i;
    row.kind = s.kind;
    if (s.kind == LayerKind::kConv) {
      const double stride2 = static_cast<double>(s.stride * s.stride);
      row.input_dim = s.input.width();
      row.ciphertexts_per_weight =
          static_cast<double>(s.input.height() * s.input.width()) / stride2;
      row.weights_per_ciphertext =
          static_cast<double>(s.out_c * s.kernel_h * s.kernel_w) / stride2;
    } else {
      row.input_dim = s.in_dim();
      row.ciphertexts_per_weight = 1.0;
      row.weights_per_ciphertext = static_cast<double>(s.out_dim);
    }
    row.muladd_before = dense_muladd_count(s);
    row.muladd_after = row.muladd_before;
    report.rows.push_back(row);
  }
  auto rank_by = [&](auto key, auto set_rank) {
    std::vector<std::size_t> order(report.rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return key(report.rows[a]) > key(report.rows[b]);
    });
    for (std::size_t r = 0; r < order.size(); ++r) set_rank(report.rows[order[r]], r + 1);
  };
  rank_by([](const LayerPriority& r) { return r.ciphertexts_per_weight; },
          [](LayerPriority& r, std::size_t rank) { r.prune_rank = rank; });
  rank_by([](const LayerPriority& r) { return r.weights_per_ciphertext; },
          [](LayerPriority& r, std::size_t rank) { r.quantize_rank = rank; });
  return report;
}

}  // namespace

PruneQuantReport layer_priority_report(const Model& model) {
  std::vector<LayerSpec> specs;
  for (const auto& l : model.layers) specs.push_back(l.spec);
  PruneQuantReport report = priority_from_specs(specs);
  for (auto& row : report.rows) {
    const Layer& layer = model.layers[row.layer];
    row.variant = variant_name(*layer.weights);
    row.muladd_after = planned_hmul_count(layer);
    if (const auto* pc = std::get_if<PrunedCodebook>(&*layer.weights)) row.bits = pc->bits;
  }
  return report;
}

PruneQuantReport layer_priority_report(const RealModel& model) {
  std::vector<LayerSpec> specs;
  for (const auto& l : model.layers) specs.push_back(l.spec);
  return priority_from_specs(specs);
}

CompressResult compress_model(const RealModel& real, const CompressOptions& options) {
  if (options.binarize && options.bits != 0) {
    throw ConfigError("--bits and --binarize are mutually exclusive");
  }
  if (options.binarize && options.prune_ratio != 0.0) {
    throw ConfigError("binarized layers cannot be pruned");
  }
  if (!(options.prune_ratio >= 0.0 && options.prune_ratio < 1.0)) {
    throw ConfigError("prune ratio must be in [0, 1)");
  }
  real.validate();

  CompressResult result;
  Model& model = result.model;
  model.input_shape = real.input_shape;
  model.input_scale_exp = options.scale_exp;
  model.layers.resize(real.layers.size());
  result.report = layer_priority_report(real);

  // Scale entering each layer depends on the variants chosen upstream, so
  // weights are compressed in priority order but biases are placed in a
  // second, sequential pass.
  std::vector<std::size_t> order(result.report.rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return result.report.rows[a].prune_rank < result.report.rows[b].prune_rank;
  });
  std::vector<RealLayer> folded(real.layers);
  for (std::size_t r : order) {
    LayerPriority& row = result.report.rows[r];
    RealLayer& src = folded[row.layer];
    if (src.bn) src = fold_bn(src, *src.bn);
    Layer& dst = model.layers[row.layer];
    dst.spec = src.spec;
    if (options.binarize) {
      dst.weights = binarize(src.weights);
      dst.weight_scale_exp = 0;
      row.variant = "binary";
    } else {
      auto mask = prune_magnitude(src.weights, options.prune_ratio);
      row.prune_ratio = options.prune_ratio;
      if (options.bits > 0) {
        auto cb = quantize_codebook(src.weights, mask, options.bits, options.scale_exp,
                                    options.seed + row.layer);
        dst.weights = std::move(cb.weights);
        row.bits = options.bits;
        row.variant = "codebook";
      } else {
        std::vector<double> pruned = src.weights;
        for (std::size_t i = 0; i < pruned.size(); ++i) {
          if (!mask[i]) pruned[i] = 0.0;
        }
        dst.weights = integerize(pruned, options.scale_exp);
        row.variant = "dense";
      }
      dst.weight_scale_exp = options.scale_exp;
    }
  }
  for (std::size_t i = 0; i < real.layers.size(); ++i) {
    Layer& dst = model.layers[i];
    if (!real.layers[i].spec.is_linear()) {
      dst.spec = real.layers[i].spec;
      continue;
    }
    const int bias_scale = model.scale_before(i) + dst.weight_scale_exp;
    dst.bias.clear();
    for (double b : folded[i].bias) dst.bias.push_back(quantize_fixed(b, bias_scale));
  }
  for (auto& row : result.report.rows) {
    row.muladd_after = planned_hmul_count(model.layers[row.layer]);
  }
  model.validate();
  return result;
}

namespace {

using nlohmann::json;

std::vector<double> doubles_or_random(const json& j, const char* key, std::size_t count,
                                      Prg& prg, double limit) {
  if (j.contains(key)) {
    auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != count) {
      throw ShapeError(std::string("'") + key + "' has " + std::to_string(v.size()) +
                       " entries, expected " + std::to_string(count));
    }
    return v;
  }
  std::vector<double> out(count);
  for (auto& x : out) x = uniform_in(prg, -limit, limit);
  return out;
}

BNParams bn_from_json(const json& j, std::size_t channels, Prg& prg) {
  BNParams bn;
  if (j.is_boolean()) {
    for (std::size_t k = 0; k < channels; ++k) {
      bn.gamma.push_back(uniform_in(prg, 0.5, 1.5));
      bn.beta.push_back(uniform_in(prg, -0.1, 0.1));
      bn.mean.push_back(uniform_in(prg, -0.1, 0.1));
      bn.var.push_back(uniform_in(prg, 0.5, 1.5));
    }
    return bn;
  }
  bn.gamma = j.at("gamma").get<std::vector<double>>();
  bn.beta = j.at("beta").get<std::vector<double>>();
  bn.mean = j.at("mean").get<std::vector<double>>();
  bn.var = j.at("var").get<std::vector<double>>();
  bn.eps = j.value("eps", 1e-5);
  return bn;
}

}  // namespace

RealModel real_model_from_json(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("model JSON: ") + e.what());
  }
  try {
    RealModel model;
    for (auto d : doc.at("input").get<std::vector<std::size_t>>()) {
      model.input_shape.dims.push_back(d);
    }
    const Seed root = seed_from_u64(doc.value("seed", std::uint64_t{1}));
    Shape current = model.input_shape;
    std::size_t index = 0;
    for (const json& lj : doc.at("layers")) {
      const std::string type = lj.at("type").get<std::string>();
      Prg prg(derive_seed(root, "layer", index));
      RealLayer layer;
      if (type == "conv") {
        layer.spec = LayerSpec::conv(current, lj.at("kernel").get<std::size_t>(),
                                     lj.at("filters").get<std::size_t>(),
                                     lj.value("stride", std::size_t{1}),
                                     lj.value("padding", std::size_t{0}));
      } else if (type == "fc") {
        if (current.rank() != 1) throw ShapeError("fc layer needs a flat input; add a flatten layer");
        layer.spec = LayerSpec::fc(current.size(), lj.at("out").get<std::size_t>());
      } else if (type == "relu") {
        layer.spec = LayerSpec::relu(current);
      } else if (type == "maxpool") {
        const auto window = lj.at("window").get<std::size_t>();
        layer.spec = LayerSpec::maxpool(current, window, lj.value("stride", window));
      } else if (type == "flatten") {
        layer.spec = LayerSpec::flatten(current);
      } else {
        throw FormatError("unknown layer type '" + type + "'");
      }
      if (layer.spec.is_linear()) {
        const double limit = std::sqrt(3.0 / static_cast<double>(layer.spec.fan_in()));
        layer.weights = doubles_or_random(lj, "weights", layer.spec.weight_count(), prg, limit);
        layer.bias = doubles_or_random(lj, "bias", layer.spec.bias_count(), prg, 0.1);
        if (lj.contains("batchnorm") && !(lj.at("batchnorm").is_boolean() && !lj.at("batchnorm").get<bool>())) {
          layer.bn = bn_from_json(lj.at("batchnorm"), layer.spec.bias_count(), prg);
        }
      }
      current = layer.spec.output();
      model.layers.push_back(std::move(layer));
      ++index;
    }
    model.validate();
    return model;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model JSON: ") + e.what());
  }
}

Bytes serialize_real_model(const RealModel& model) {
  model.validate();
  ByteWriter w;
  w.raw(std::string("PPMD"));
  w.u16(kModelFileVersion);
  w.u16(static_cast<std::uint16_t>(model.layers.size()));
  w.u8(static_cast<std::uint8_t>(model.input_shape.rank()));
  for (auto d : model.input_shape.dims) w.u32(static_cast<std::uint32_t>(d));
  w.i16(0);
  for (const RealLayer& layer : model.layers) {
    w.u8(static_cast<std::uint8_t>(layer.spec.kind));
    write_layer_geometry(w, layer.spec);
    if (!layer.spec.is_linear()) continue;
    w.i16(0);
    w.u8(static_cast<std::uint8_t>(WeightTag::kDenseReal));
    for (double v : layer.weights) w.f64_le(v);
    w.u32(static_cast<std::uint32_t>(layer.bias.size()));
    for (double b : layer.bias) w.f64_le(b);
    w.u8(layer.bn ? 1 : 0);
    if (layer.bn) {
      for (const auto* vec : {&layer.bn->gamma, &layer.bn->beta, &layer.bn->mean, &layer.bn->var}) {
        for (double v : *vec) w.f64_le(v);
      }
      w.f64_le(layer.bn->eps);
    }
  }
  return std::move(w).take();
}

RealModel parse_real_model(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  auto magic = r.raw(4);
  if (std::string(magic.begin(), magic.end()) != "PPMD") {
    throw FormatError("not a model file (bad magic)");
  }
  if (auto v = r.u16(); v != kModelFileVersion) {
    throw FormatError("unsupported model file version " + std::to_string(v));
  }
  RealModel m;
  const std::uint16_t count = r.u16();
  const std::uint8_t rank = r.u8();
  for (std::uint8_t i = 0; i < rank; ++i) m.input_shape.dims.push_back(r.u32());
  r.i16();
  for (std::uint16_t i = 0; i < count; ++i) {
    RealLayer layer;
    layer.spec = read_layer_geometry(r, static_cast<LayerKind>(r.u8()));
    if (layer.spec.is_linear()) {
      r.i16();
      if (static_cast<WeightTag>(r.u8()) != WeightTag::kDenseReal) {
        throw FormatError("staging model must use the DenseReal variant");
      }
      layer.weights.resize(layer.spec.weight_count());
      for (auto& v : layer.weights) v = r.f64_le();
      layer.bias.resize(r.u32());
      for (auto& b : layer.bias) b = r.f64_le();
      if (r.u8() != 0) {
        BNParams bn;
        const std::size_t ch = layer.bias.size();
        for (auto* vec : {&bn.gamma, &bn.beta, &bn.mean, &bn.var}) {
          vec->resize(ch);
          for (auto& v : *vec) v = r.f64_le();
        }
        bn.eps = r.f64_le();
        layer.bn = std::move(bn);
      }
    }
    m.layers.push_back(std::move(layer));
  }
  r.expect_done("staging model");
  m.validate();
  return m;
}

}  // namespace popcorn
