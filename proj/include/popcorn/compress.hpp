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

// Server-side model preparation: batch-norm folding, magnitude pruning,
// 1-D codebook quantization, binarization and integerization.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "popcorn/model.hpp"

namespace popcorn {

/// Per-channel batch-norm statistics and affine parameters.
struct BNParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> mean;
  std::vector<double> var;
  double eps = 1e-5;

  std::size_t channels() const { return gamma.size(); }
};

/// Real-valued layer prior to compression.
struct RealLayer {
  LayerSpec spec;
  std::vector<double> weights;  // dense layout, see conv_weight_index
  std::vector<double> bias;
  std::optional<BNParams> bn;
};

struct RealModel {
  Shape input_shape;
  std::vector<RealLayer> layers;

  void validate() const;
};

/// Absorbs `bn` into the preceding linear layer:
///   w' = w * gamma / sqrt(var + eps)
///   b' = (b - mean) * gamma / sqrt(var + eps) + beta
/// Throws ShapeError when channel counts differ.
RealLayer fold_bn(const RealLayer& linear, const BNParams& bn);

/// Plaintext real evaluation, used to check folding and quantization error.
std::vector<double> real_forward(const RealModel& model, std::span<const double> input);
std::vector<double> real_layer(const RealLayer& layer, std::span<const double> x);

/// Keep-mask that zeroes the floor(ratio * count) weights of smallest
/// magnitude; ties are removed in index order. 0 <= ratio < 1.
std::vector<bool> prune_magnitude(std::span<const double> weights, double ratio);

struct KMeansResult {
  std::vector<double> centroids;        // sorted ascending
  std::vector<std::size_t> assignment;  // per input value
  int iterations = 0;
};

/// Lloyd's algorithm in one dimension with k-means++ seeding. Stops after 100
/// iterations or when no centroid moves more than 1e-9. k is clamped to the
/// number of distinct values.
KMeansResult kmeans_1d(std::span<const double> values, std::size_t k,
                       std::uint64_t seed);

struct CodebookResult {
  PrunedCodebook weights;
  std::vector<double> centroids;  // real-valued, before integerization
};

/// Clusters the surviving weights into at most 2^bits codewords and
/// integerizes the codewords at 2^scale_exp. Codewords that round to the same
/// integer are merged; weights whose codeword rounds to zero are dropped.
CodebookResult quantize_codebook(std::span<const double> weights,
                                 const std::vector<bool>& mask, unsigned bits,
                                 int scale_exp, std::uint64_t seed);

/// sign(w) with sign(0) = +1.
BinaryWeights binarize(std::span<const double> weights);

DenseInt integerize(std::span<const double> weights, int scale_exp);

struct LayerPriority {
  std::size_t layer = 0;
  LayerKind kind = LayerKind::kFc;
  std::size_t input_dim = 0;          // spatial input width (conv) or in_dim (fc)
  double ciphertexts_per_weight = 0;  // conv: in_h * in_w / s^2, fc: 1
  double weights_per_ciphertext = 0;  // conv: c_o * f_w^2 / s^2, fc: out_dim
  std::size_t prune_rank = 0;         // 1 = prune first
  std::size_t quantize_rank = 0;      // 1 = quantize first
  double prune_ratio = 0;
  unsigned bits = 0;
  std::string variant = "dense";
  std::uint64_t muladd_before = 0;
  std::uint64_t muladd_after = 0;
};

struct PruneQuantReport {
  std::vector<LayerPriority> rows;

  std::string to_csv() const;
};

/// Per linear layer fan-out statistics and the suggested prune / quantize
/// ordering (descending ciphertexts-per-weight / weights-per-ciphertext).
PruneQuantReport layer_priority_report(const Model& model);
PruneQuantReport layer_priority_report(const RealModel& model);

struct CompressOptions {
  double prune_ratio = 0.0;
  unsigned bits = 0;  // 0 = keep dense integer weights
  bool binarize = false;
  int scale_exp = 8;
  std::uint64_t seed = 1;
};

struct CompressResult {
  Model model;
  PruneQuantReport report;
};

/// fold_bn -> prune -> quantize (or binarize) -> integerize, layer by layer in
/// priority order. Throws ConfigError for contradictory options.
CompressResult compress_model(const RealModel& model, const CompressOptions& options);

/// Synthetic model description (JSON): input shape, input scale, seed and a
/// layer list; missing weights are drawn deterministically from the seed.
RealModel real_model_from_json(const std::string& json_text);

/// PPMD with the DenseReal staging variant (f64 weights and bias, optional BN).
Bytes serialize_real_model(const RealModel& model);
RealModel parse_real_model(std::span<const std::uint8_t> data);

}  // namespace popcorn
