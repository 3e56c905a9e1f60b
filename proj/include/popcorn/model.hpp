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
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "popcorn/bytes.hpp"
#include "popcorn/encoding.hpp"

namespace popcorn {

enum class LayerKind : std::uint8_t {
  kConv = 1,
  kFc = 2,
  kRelu = 3,
  kMaxPool = 4,
  kFlatten = 5,
};

const char* to_string(LayerKind kind);

/// Geometry of one layer. Which fields matter depends on `kind`:
///   conv:    in_h, in_w, in_c, kernel_h, kernel_w, out_c, stride, padding
///   fc:      in_dim, out_dim
///   maxpool: in_h, in_w, in_c, window, stride
///   relu, flatten: `input` only
/// Filters always span every input channel.
struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  Shape input;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t out_c = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t out_dim = 0;
  std::size_t window = 0;

  static LayerSpec conv(Shape input, std::size_t kernel, std::size_t filters,
                        std::size_t stride = 1, std::size_t padding = 0);
  static LayerSpec fc(std::size_t in_dim, std::size_t out_dim);
  static LayerSpec relu(Shape input);
  static LayerSpec maxpool(Shape input, std::size_t window, std::size_t stride);
  static LayerSpec flatten(Shape input);

  bool is_linear() const { return kind == LayerKind::kConv || kind == LayerKind::kFc; }
  std::size_t in_dim() const { return input.size(); }
  std::size_t out_h() const;
  std::size_t out_w() const;
  Shape output() const;
  /// Dense weight count: out_c * kernel_h * kernel_w * in_c, or out_dim * in_dim.
  std::size_t weight_count() const;
  /// Entries per filter (conv) or per output row (fc).
  std::size_t fan_in() const;
  std::size_t bias_count() const;
  /// Throws ShapeError on inconsistent geometry.
  void validate() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Dense weight layouts: conv [out_c][kernel_h][kernel_w][in_c], fc [out][in].
inline std::size_t conv_weight_index(const LayerSpec& s, std::size_t k,
                                     std::size_t u, std::size_t v, std::size_t c) {
  return ((k * s.kernel_h + u) * s.kernel_w + v) * s.input.channels() + c;
}

struct DenseInt {
  std::vector<std::int64_t> values;
  friend bool operator==(const DenseInt&, const DenseInt&) = default;
};

/// Pruned weights sharing a small table of integer codewords.
struct PrunedCodebook {
  std::size_t dense_size = 0;
  std::vector<std::uint32_t> indices;        // strictly increasing dense positions
  std::vector<std::uint16_t> codeword_ids;   // one per index
  std::vector<std::int64_t> codebook;        // <= 2^bits entries
  unsigned bits = 0;
  friend bool operator==(const PrunedCodebook&, const PrunedCodebook&) = default;
};

/// Weights in {-1, +1}; plus[i] is true for +1.
struct BinaryWeights {
  std::vector<bool> plus;
  friend bool operator==(const BinaryWeights&, const BinaryWeights&) = default;
};

using CompressedWeights = std::variant<DenseInt, PrunedCodebook, BinaryWeights>;

const char* variant_name(const CompressedWeights& w);
std::vector<std::int64_t> expand(const CompressedWeights& w);
/// Throws ShapeError/FormatError when the representation is malformed or
/// does not cover `dense_size` weights.
void validate_weights(const CompressedWeights& w, std::size_t dense_size);

/// One layer of an integerized model. Linear layers multiply activations at
/// scale 2^s by integer weights at scale 2^weight_scale_exp, so their output
/// (and their bias) lives at scale 2^(s + weight_scale_exp).
struct Layer {
  LayerSpec spec;
  std::optional<CompressedWeights> weights;
  std::vector<std::int64_t> bias;
  int weight_scale_exp = 0;

  friend bool operator==(const Layer&, const Layer&) = default;
};

struct Model {
  Shape input_shape;
  int input_scale_exp = 0;
  std::vector<Layer> layers;

  /// Throws ShapeError when layer inputs do not chain.
  void validate() const;
  Shape output_shape() const;
  int output_scale_exp() const;
  /// Scale exponent of the activations entering layer `index`.
  int scale_before(std::size_t index) const;

  friend bool operator==(const Model&, const Model&) = default;
};

/// Calls fn(output_index, input_index, weight_index) for every connection of
/// a linear layer, in output-major order. Connections landing in zero padding
/// are skipped. Output indices follow the (h, w, c) layout of spec.output().
template <class Fn>
void for_each_connection(const LayerSpec& spec, Fn&& fn) {
  if (spec.kind == LayerKind::kFc) {
    const std::size_t in = spec.in_dim();
    for (std::size_t k = 0; k < spec.out_dim; ++k) {
      for (std::size_t j = 0; j < in; ++j) fn(k, j, k * in + j);
    }
    return;
  }
  const Shape out = spec.output();
  const std::size_t in_h = spec.input.height();
  const std::size_t in_w = spec.input.width();
  const std::size_t in_c = spec.input.channels();
  for (std::size_t oy = 0; oy < out.height(); ++oy) {
    for (std::size_t ox = 0; ox < out.width(); ++ox) {
      for (std::size_t k = 0; k < spec.out_c; ++k) {
        const std::size_t o = hwc_index(out, oy, ox, k);
        for (std::size_t u = 0; u < spec.kernel_h; ++u) {
          const std::size_t iy = oy * spec.stride + u;
          if (iy < spec.padding || iy - spec.padding >= in_h) continue;
          for (std::size_t v = 0; v < spec.kernel_w; ++v) {
            const std::size_t ix = ox * spec.stride + v;
            if (ix < spec.padding || ix - spec.padding >= in_w) continue;
            for (std::size_t c = 0; c < in_c; ++c) {
              fn(o, hwc_index(spec.input, iy - spec.padding, ix - spec.padding, c),
                 conv_weight_index(spec, k, u, v, c));
            }
          }
        }
      }
    }
  }
}

/// Plaintext integer evaluation of one layer / a whole model. The reference
/// the encrypted pipeline must match exactly.
PlainTensor reference_layer(const Layer& layer, const PlainTensor& x);
PlainTensor reference_forward(const Model& model, const PlainTensor& input);

/// hmul_plain count the encrypted evaluator spends on a linear layer,
/// excluding bias terms: distinct (input ciphertext, multiplier) pairs for
/// PrunedCodebook, every nonzero weight use for DenseInt, 0 for Binary.
std::uint64_t planned_hmul_count(const Layer& layer);
/// Multiply-accumulates of the uncompressed dense layer.
std::uint64_t dense_muladd_count(const LayerSpec& spec);

// PPMD file. Header fields and dims are big-endian, payload numbers are
// little-endian:
//   "PPMD", u16 version, u16 layer count, u8 input rank, u32 dims[],
//   i16 input scale_exp, then per layer:
//   u8 kind, geometry (see docs/formats.md), and for conv/fc:
//   i16 weight scale_exp, u8 variant tag, payload, u32 bias count, i64 bias[].
inline constexpr std::uint16_t kModelFileVersion = 1;

enum class WeightTag : std::uint8_t {
  kDenseInt = 1,
  kPrunedCodebook = 2,
  kBinary = 3,
  kDenseReal = 4,  // staging input for compression only
};

void write_layer_geometry(ByteWriter& w, const LayerSpec& spec);
LayerSpec read_layer_geometry(ByteReader& r, LayerKind kind);

Bytes serialize_model(const Model& model);
Model parse_model(std::span<const std::uint8_t> data);

}  // namespace popcorn
