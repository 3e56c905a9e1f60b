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

#include "popcorn/model.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <utility>

#include "popcorn/error.hpp"

namespace popcorn {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kFc: return "fc";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kFlatten: return "flatten";
  }
  return "unknown";
}

LayerSpec LayerSpec::conv(Shape input, std::size_t kernel, std::size_t filters,
                          std::size_t stride, std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::kConv;
  s.input = std::move(input);
  s.kernel_h = s.kernel_w = kernel;
  s.out_c = filters;
  s.stride = stride;
  s.padding = padding;
  s.validate();
  return s;
}

LayerSpec LayerSpec::fc(std::size_t in_dim, std::size_t out_dim) {
  LayerSpec s;
  s.kind = LayerKind::kFc;
  s.input = Shape::flat(in_dim);
  s.out_dim = out_dim;
  s.validate();
  return s;
}

LayerSpec LayerSpec::relu(Shape input) {
  LayerSpec s;
  s.kind = LayerKind::kRelu;
  s.input = std::move(input);
  s.validate();
  return s;
}

LayerSpec LayerSpec::maxpool(Shape input, std::size_t window, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::kMaxPool;
  s.input = std::move(input);
  s.window = window;
  s.stride = stride;
  s.validate();
  return s;
}

LayerSpec LayerSpec::flatten(Shape input) {
  LayerSpec s;
  s.kind = LayerKind::kFlatten;
  s.input = std::move(input);
  s.validate();
  return s;
}

std::size_t LayerSpec::out_h() const {
  switch (kind) {
    case LayerKind::kConv:
      return (input.height() + 2 * padding - kernel_h) / stride + 1;
    case LayerKind::kMaxPool:
      return (input.height() - window) / stride + 1;
    default:
      throw ShapeError(std::string("out_h() on ") + to_string(kind));
  }
}

std::size_t LayerSpec::out_w() const {
  switch (kind) {
    case LayerKind::kConv:
      return (input.width() + 2 * padding - kernel_w) / stride + 1;
    case LayerKind::kMaxPool:
      return (input.width() - window) / stride + 1;
    default:
      throw ShapeError(std::string("out_w() on ") + to_string(kind));
  }
}

Shape LayerSpec::output() const {
  switch (kind) {
    case LayerKind::kConv: return Shape::hwc(out_h(), out_w(), out_c);
    case LayerKind::kFc: return Shape::flat(out_dim);
    case LayerKind::kRelu: return input;
    case LayerKind::kMaxPool: return Shape::hwc(out_h(), out_w(), input.channels());
    case LayerKind::kFlatten: return Shape::flat(input.size());
  }
  throw ShapeError("unknown layer kind");
}

std::size_t LayerSpec::weight_count() const {
  switch (kind) {
    case LayerKind::kConv: return out_c * kernel_h * kernel_w * input.channels();
    case LayerKind::kFc: return out_dim * in_dim();
    default: return 0;
  }
}

std::size_t LayerSpec::fan_in() const {
  switch (kind) {
    case LayerKind::kConv: return kernel_h * kernel_w * input.channels();
    case LayerKind::kFc: return in_dim();
    default: return 0;
  }
}

std::size_t LayerSpec::bias_count() const {
  switch (kind) {
    case LayerKind::kConv: return out_c;
    case LayerKind::kFc: return out_dim;
    default: return 0;
  }
}

void LayerSpec::validate() const {
  auto fail = [&](const std::string& why) {
    throw ShapeError(std::string(to_string(kind)) + " layer: " + why);
  };
  if (input.size() == 0) fail("empty input shape");
  switch (kind) {
    case LayerKind::kConv: {
      if (input.rank() != 3) fail("input must be (h, w, c), got " + input.str());
      if (kernel_h == 0 || kernel_w == 0 || out_c == 0) fail("empty filter bank");
      if (stride == 0) fail("stride must be positive");
      if (kernel_h > input.height() + 2 * padding ||
          kernel_w > input.width() + 2 * padding) {
        fail("filter larger than padded input");
      }
      if (padding >= kernel_h || padding >= kernel_w) fail("padding must be smaller than the filter");
      break;
    }
    case LayerKind::kFc:
      if (input.rank() != 1) fail("input must be flat, got " + input.str());
      if (out_dim == 0) fail("out_dim must be positive");
      break;
    case LayerKind::kMaxPool: {
      if (input.rank() != 3) fail("input must be (h, w, c), got " + input.str());
      if (window == 0 || stride == 0) fail("window and stride must be positive");
      if (stride > window) fail("stride exceeds window");
      if (window > 1 && (window >= input.height() || window >= input.width())) {
        fail("window must be smaller than the input");
      }
      if ((input.height() - window) % stride != 0 ||
          (input.width() - window) % stride != 0) {
        fail("input " + input.str() + " not coverable by window " +
             std::to_string(window) + " stride " + std::to_string(stride));
      }
      break;
    }
    case LayerKind::kRelu:
    case LayerKind::kFlatten:
      break;
    default:
      fail("unknown kind");
  }
}

const char* variant_name(const CompressedWeights& w) {
  switch (w.index()) {
    case 0: return "dense";
    case 1: return "codebook";
    default: return "binary";
  }
}

std::vector<std::int64_t> expand(const CompressedWeights& w) {
  if (const auto* d = std::get_if<DenseInt>(&w)) return d->values;
  if (const auto* pc = std::get_if<PrunedCodebook>(&w)) {
    std::vector<std::int64_t> out(pc->dense_size, 0);
    for (std::size_t i = 0; i < pc->indices.size(); ++i) {
      out.at(pc->indices[i]) = pc->codebook.at(pc->codeword_ids[i]);
    }
    return out;
  }
  const auto& b = std::get<BinaryWeights>(w);
  std::vector<std::int64_t> out(b.plus.size());
  for (std::size_t i = 0; i < b.plus.size(); ++i) out[i] = b.plus[i] ? 1 : -1;
  return out;
}

void validate_weights(const CompressedWeights& w, std::size_t dense_size) {
  if (const auto* d = std::get_if<DenseInt>(&w)) {
    if (d->values.size() != dense_size) throw ShapeError("dense weight count mismatch");
    return;
  }
  if (const auto* pc = std::get_if<PrunedCodebook>(&w)) {
    if (pc->dense_size != dense_size) throw ShapeError("codebook dense size mismatch");
    if (pc->indices.size() != pc->codeword_ids.size()) {
      throw FormatError("codebook index/id count mismatch");
    }
    if (pc->bits < 1 || pc->bits > 12) throw FormatError("codebook bits outside [1, 12]");
    if (pc->codebook.size() > (std::size_t{1} << pc->bits)) {
      throw FormatError("codebook larger than 2^bits");
    }
    for (std::size_t i = 0; i < pc->indices.size(); ++i) {
      if (pc->indices[i] >= dense_size) throw FormatError("codebook index out of range");
      if (i > 0 && pc->indices[i] <= pc->indices[i - 1]) {
        throw FormatError("codebook indices not strictly increasing");
      }
      if (pc->codeword_ids[i] >= pc->codebook.size()) {
        throw FormatError("codeword id out of range");
      }
    }
    return;
  }
  if (std::get<BinaryWeights>(w).plus.size() != dense_size) {
    throw ShapeError("binary mask does not cover the dense shape");
  }
}

void Model::validate() const {
  Shape current = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& layer = layers[i];
    layer.spec.validate();
    if (!(layer.spec.input == current)) {
      throw ShapeError("layer " + std::to_string(i) + " expects input " +
                       layer.spec.input.str() + ", previous output is " +
                       current.str());
    }
    if (layer.spec.is_linear()) {
      if (!layer.weights) throw ShapeError("linear layer " + std::to_string(i) + " has no weights");
      validate_weights(*layer.weights, layer.spec.weight_count());
      if (layer.bias.size() != layer.spec.bias_count()) {
        throw ShapeError("layer " + std::to_string(i) + " bias count mismatch");
      }
    } else if (layer.weights || !layer.bias.empty()) {
      throw ShapeError("non-linear layer " + std::to_string(i) + " carries weights");
    }
    current = layer.spec.output();
  }
}

Shape Model::output_shape() const {
  return layers.empty() ? input_shape : layers.back().spec.output();
}

int Model::scale_before(std::size_t index) const {
  int scale = input_scale_exp;
  for (std::size_t i = 0; i < index && i < layers.size(); ++i) {
    if (layers[i].spec.is_linear()) scale += layers[i].weight_scale_exp;
  }
  return scale;
}

int Model::output_scale_exp() const { return scale_before(layers.size()); }

namespace {

__extension__ using i128 = __int128;

std::int64_t checked_i64(i128 v) {
  if (v > std::numeric_limits<std::int64_t>::max() ||
      v < std::numeric_limits<std::int64_t>::min()) {
    throw OverflowError("reference evaluation exceeds 64-bit range");
  }
  return static_cast<std::int64_t>(v);
}

PlainTensor reference_linear(const Layer& layer, const PlainTensor& x) {
  const LayerSpec& s = layer.spec;
  const auto w = expand(*layer.weights);
  const Shape out_shape = s.output();
  std::vector<i128> acc(out_shape.size(), 0);
  for_each_connection(s, [&](std::size_t o, std::size_t i, std::size_t wi) {
    acc[o] += static_cast<i128>(w[wi]) * x.values[i];
  });
  const std::size_t channels = s.bias_count();
  std::vector<std::int64_t> values(acc.size());
  for (std::size_t o = 0; o < acc.size(); ++o) {
    values[o] = checked_i64(acc[o] + layer.bias[o % channels]);
  }
  return make_plain(out_shape, x.scale_exp + layer.weight_scale_exp, std::move(values));
}

PlainTensor reference_maxpool(const LayerSpec& s, const PlainTensor& x) {
  const Shape out = s.output();
  std::vector<std::int64_t> values(out.size());
  for (std::size_t oy = 0; oy < out.height(); ++oy) {
    for (std::size_t ox = 0; ox < out.width(); ++ox) {
      for (std::size_t c = 0; c < out.channels(); ++c) {
        std::int64_t best = std::numeric_limits<std::int64_t>::min();
        for (std::size_t dy = 0; dy < s.window; ++dy) {
          for (std::size_t dx = 0; dx < s.window; ++dx) {
            best = std::max(best, x.values[hwc_index(s.input, oy * s.stride + dy,
                                                     ox * s.stride + dx, c)]);
          }
        }
        values[hwc_index(out, oy, ox, c)] = best;
      }
    }
  }
  return make_plain(out, x.scale_exp, std::move(values));
}

}  // namespace

PlainTensor reference_layer(const Layer& layer, const PlainTensor& x) {
  if (!(x.shape == layer.spec.input)) {
    throw ShapeError("reference_layer: input " + x.shape.str() + " vs expected " +
                     layer.spec.input.str());
  }
  switch (layer.spec.kind) {
    case LayerKind::kConv:
    case LayerKind::kFc:
      return reference_linear(layer, x);
    case LayerKind::kRelu: {
      PlainTensor out = x;
      for (auto& v : out.values) v = std::max<std::int64_t>(v, 0);
      return out;
    }
    case LayerKind::kMaxPool:
      return reference_maxpool(layer.spec, x);
    case LayerKind::kFlatten: {
      PlainTensor out = x;
      out.shape = layer.spec.output();
      return out;
    }
  }
  throw ShapeError("unknown layer kind");
}

PlainTensor reference_forward(const Model& model, const PlainTensor& input) {
  PlainTensor x = input;
  for (const Layer& layer : model.layers) x = reference_layer(layer, x);
  return x;
}

std::uint64_t planned_hmul_count(const Layer& layer) {
  if (!layer.spec.is_linear() || !layer.weights) return 0;
  if (std::holds_alternative<BinaryWeights>(*layer.weights)) return 0;
  const auto dense = expand(*layer.weights);
  if (const auto* pc = std::get_if<PrunedCodebook>(&*layer.weights)) {
    std::vector<std::int32_t> id_of(pc->dense_size, -1);
    for (std::size_t i = 0; i < pc->indices.size(); ++i) {
      id_of[pc->indices[i]] = pc->codeword_ids[i];
    }
    std::set<std::pair<std::size_t, std::int32_t>> used;
    for_each_connection(layer.spec, [&](std::size_t, std::size_t in, std::size_t wi) {
      if (id_of[wi] >= 0) used.emplace(in, id_of[wi]);
    });
    return used.size();
  }
  std::uint64_t count = 0;
  for_each_connection(layer.spec, [&](std::size_t, std::size_t, std::size_t wi) {
    if (dense[wi] != 0) ++count;
  });
  return count;
}

std::uint64_t dense_muladd_count(const LayerSpec& spec) {
  std::uint64_t count = 0;
  if (!spec.is_linear()) return 0;
  for_each_connection(spec, [&](std::size_t, std::size_t, std::size_t) { ++count; });
  return count;
}

void write_layer_geometry(ByteWriter& w, const LayerSpec& s) {
  auto u = [&](std::size_t v) { w.u32(static_cast<std::uint32_t>(v)); };
  switch (s.kind) {
    case LayerKind::kConv:
      u(s.input.height()); u(s.input.width()); u(s.input.channels());
      u(s.kernel_h); u(s.kernel_w); u(s.out_c); u(s.stride); u(s.padding);
      break;
    case LayerKind::kFc:
      u(s.in_dim()); u(s.out_dim);
      break;
    case LayerKind::kMaxPool:
      u(s.input.height()); u(s.input.width()); u(s.input.channels());
      u(s.window); u(s.stride);
      break;
    case LayerKind::kRelu:
    case LayerKind::kFlatten:
      w.u8(static_cast<std::uint8_t>(s.input.rank()));
      for (auto d : s.input.dims) u(d);
      break;
  }
}

LayerSpec read_layer_geometry(ByteReader& r, LayerKind kind) {
  LayerSpec s;
  s.kind = kind;
  switch (kind) {
    case LayerKind::kConv: {
      std::size_t h = r.u32(), w = r.u32(), c = r.u32();
      s.input = Shape::hwc(h, w, c);
      s.kernel_h = r.u32(); s.kernel_w = r.u32(); s.out_c = r.u32();
      s.stride = r.u32(); s.padding = r.u32();
      break;
    }
    case LayerKind::kFc: {
      s.input = Shape::flat(r.u32());
      s.out_dim = r.u32();
      break;
    }
    case LayerKind::kMaxPool: {
      std::size_t h = r.u32(), w = r.u32(), c = r.u32();
      s.input = Shape::hwc(h, w, c);
      s.window = r.u32(); s.stride = r.u32();
      break;
    }
    case LayerKind::kRelu:
    case LayerKind::kFlatten: {
      const std::uint8_t rank = r.u8();
      for (std::uint8_t i = 0; i < rank; ++i) s.input.dims.push_back(r.u32());
      break;
    }
    default:
      throw FormatError("unknown layer kind tag");
  }
  s.validate();
  return s;
}

namespace {

void write_weights(ByteWriter& w, const CompressedWeights& weights) {
  if (const auto* d = std::get_if<DenseInt>(&weights)) {
    w.u8(static_cast<std::uint8_t>(WeightTag::kDenseInt));
    for (auto v : d->values) w.i64_le(v);
  } else if (const auto* pc = std::get_if<PrunedCodebook>(&weights)) {
    w.u8(static_cast<std::uint8_t>(WeightTag::kPrunedCodebook));
    w.u8(static_cast<std::uint8_t>(pc->bits));
    w.u32_le(static_cast<std::uint32_t>(pc->indices.size()));
    for (auto i : pc->indices) w.u32_le(i);
    for (auto id : pc->codeword_ids) w.u16_le(id);
    w.u16_le(static_cast<std::uint16_t>(pc->codebook.size()));
    for (auto c : pc->codebook) w.i64_le(c);
  } else {
    const auto& b = std::get<BinaryWeights>(weights);
    w.u8(static_cast<std::uint8_t>(WeightTag::kBinary));
    Bytes packed((b.plus.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < b.plus.size(); ++i) {
      if (b.plus[i]) packed[i / 8] |= static_cast<std::uint8_t>(1U << (i % 8));
    }
    w.raw(packed);
  }
}

CompressedWeights read_weights(ByteReader& r, std::size_t dense_size) {
  const auto tag = static_cast<WeightTag>(r.u8());
  switch (tag) {
    case WeightTag::kDenseInt: {
      DenseInt d;
      d.values.resize(dense_size);
      for (auto& v : d.values) v = r.i64_le();
      return d;
    }
    case WeightTag::kPrunedCodebook: {
      PrunedCodebook pc;
      pc.dense_size = dense_size;
      pc.bits = r.u8();
      const std::uint32_t nnz = r.u32_le();
      if (nnz > dense_size) throw FormatError("codebook nonzero count exceeds weights");
      pc.indices.resize(nnz);
      for (auto& i : pc.indices) i = r.u32_le();
      pc.codeword_ids.resize(nnz);
      for (auto& id : pc.codeword_ids) id = r.u16_le();
      pc.codebook.resize(r.u16_le());
      for (auto& c : pc.codebook) c = r.i64_le();
      return pc;
    }
    case WeightTag::kBinary: {
      BinaryWeights b;
      auto packed = r.raw((dense_size + 7) / 8);
      b.plus.resize(dense_size);
      for (std::size_t i = 0; i < dense_size; ++i) {
        b.plus[i] = ((packed[i / 8] >> (i % 8)) & 1U) != 0;
      }
      return b;
    }
    case WeightTag::kDenseReal:
      throw FormatError("model holds real-valued staging weights; run compress first");
  }
  throw FormatError("unknown weight variant tag");
}

}  // namespace

Bytes serialize_model(const Model& model) {
  model.validate();
  ByteWriter w;
  w.raw(std::string("PPMD"));
  w.u16(kModelFileVersion);
  w.u16(static_cast<std::uint16_t>(model.layers.size()));
  w.u8(static_cast<std::uint8_t>(model.input_shape.rank()));
  for (auto d : model.input_shape.dims) w.u32(static_cast<std::uint32_t>(d));
  w.i16(static_cast<std::int16_t>(model.input_scale_exp));
  for (const Layer& layer : model.layers) {
    w.u8(static_cast<std::uint8_t>(layer.spec.kind));
    write_layer_geometry(w, layer.spec);
    if (!layer.spec.is_linear()) continue;
    w.i16(static_cast<std::int16_t>(layer.weight_scale_exp));
    write_weights(w, *layer.weights);
    w.u32(static_cast<std::uint32_t>(layer.bias.size()));
    for (auto b : layer.bias) w.i64_le(b);
  }
  return std::move(w).take();
}

Model parse_model(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  auto magic = r.raw(4);
  if (std::string(magic.begin(), magic.end()) != "PPMD") {
    throw FormatError("not a model file (bad magic)");
  }
  if (auto v = r.u16(); v != kModelFileVersion) {
    throw FormatError("unsupported model file version " + std::to_string(v));
  }
  Model m;
  const std::uint16_t count = r.u16();
  const std::uint8_t rank = r.u8();
  for (std::uint8_t i = 0; i < rank; ++i) m.input_shape.dims.push_back(r.u32());
  m.input_scale_exp = r.i16();
  for (std::uint16_t i = 0; i < count; ++i) {
    Layer layer;
    layer.spec = read_layer_geometry(r, static_cast<LayerKind>(r.u8()));
    if (layer.spec.is_linear()) {
      layer.weight_scale_exp = r.i16();
      layer.weights = read_weights(r, layer.spec.weight_count());
      layer.bias.resize(r.u32());
      for (auto& b : layer.bias) b = r.i64_le();
    }
    m.layers.push_back(std::move(layer));
  }
  r.expect_done("model");
  m.validate();
  return m;
}

}  // namespace popcorn
