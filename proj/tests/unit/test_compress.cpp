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
#include <cmath>
#include <limits>
#include <set>

#include "popcorn/compress.hpp"
#include "popcorn/error.hpp"
#include "popcorn/model.hpp"
#include "popcorn/toys.hpp"

namespace popcorn {
namespace {

double uniform(Prg& prg, double lo, double hi) {
  return lo + (hi - lo) * static_cast<double>(prg.next_u64() >> 11) / 9007199254740992.0;
}

std::vector<double> random_reals(Prg& prg, std::size_t n, double lo = -1, double hi = 1) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(prg, lo, hi);
  return v;
}

RealLayer random_conv(Prg& prg, Shape in, std::size_t k, std::size_t filters) {
  RealLayer l;
  l.spec = LayerSpec::conv(in, k, filters);
  l.weights = random_reals(prg, l.spec.weight_count());
  l.bias = random_reals(prg, filters);
  return l;
}

TEST(FoldBn, IdentityNormalizationLeavesWeights) {
  Prg prg(seed_from_u64(31));
  const RealLayer l = random_conv(prg, Shape::hwc(5, 5, 2), 3, 3);
  BNParams bn;
  bn.eps = 1e-5;
  bn.gamma.assign(3, 1.0);
  bn.beta.assign(3, 0.0);
  bn.mean.assign(3, 0.0);
  bn.var.assign(3, 1.0 - bn.eps);
  const RealLayer f = fold_bn(l, bn);
  for (std::size_t i = 0; i < l.weights.size(); ++i) EXPECT_NEAR(f.weights[i], l.weights[i], 1e-12);
  for (std::size_t i = 0; i < l.bias.size(); ++i) EXPECT_NEAR(f.bias[i], l.bias[i], 1e-12);
}

TEST(FoldBn, CenteringCancelsBias) {
  Prg prg(seed_from_u64(32));
  const RealLayer l = random_conv(prg, Shape::hwc(4, 4, 1), 2, 2);
  BNParams bn;
  bn.eps = 0.25;
  bn.gamma.assign(2, 1.0);
  bn.beta.assign(2, 0.0);
  bn.mean = l.bias;
  bn.var.assign(2, 0.75);
  const RealLayer f = fold_bn(l, bn);
  for (double b : f.bias) EXPECT_DOUBLE_EQ(b, 0.0);
}

TEST(FoldBn, MatchesLinearThenBatchNorm) {
  Prg prg(seed_from_u64(33));
  for (int trial = 0; trial < 20; ++trial) {
    const RealLayer l = random_conv(prg, Shape::hwc(6, 6, 3), 3, 4);
    BNParams bn;
    bn.gamma = random_reals(prg, 4, 0.5, 2);
    bn.beta = random_reals(prg, 4);
    bn.mean = random_reals(prg, 4);
    bn.var = random_reals(prg, 4, 0.1, 3);
    const RealLayer f = fold_bn(l, bn);
    const auto x = random_reals(prg, l.spec.input.size());
    auto y = real_layer(l, x);
    const std::size_t c = 4;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const std::size_t k = i % c;
      y[i] = (y[i] - bn.mean[k]) / std::sqrt(bn.var[k] + bn.eps) * bn.gamma[k] + bn.beta[k];
    }
    const auto z = real_layer(f, x);
    for (std::size_t i = 0; i < y.size(); ++i) {
      ASSERT_NEAR(z[i], y[i], 1e-9 * std::max(1.0, std::abs(y[i])));
    }
  }
}

TEST(FoldBn, ChannelMismatch) {
  Prg prg(seed_from_u64(34));
  const RealLayer l = random_conv(prg, Shape::hwc(4, 4, 1), 2, 2);
  BNParams bn;
  bn.gamma.assign(3, 1.0);
  bn.beta.assign(3, 0.0);
  bn.mean.assign(3, 0.0);
  bn.var.assign(3, 1.0);
  EXPECT_THROW(fold_bn(l, bn), ShapeError);
}

TEST(Prune, Examples) {
  const std::vector<double> w{0.1, -0.9, 0.05, 0.5};
  EXPECT_EQ(prune_magnitude(w, 0.5), (std::vector<bool>{false, true, false, true}));
  EXPECT_EQ(prune_magnitude(w, 0.0), (std::vector<bool>{true, true, true, true}));
  // Ties go in index order.
  EXPECT_EQ(prune_magnitude(std::vector<double>{0.2, -0.2, 0.2}, 0.34),
            (std::vector<bool>{false, true, true}));
}

TEST(Prune, CountAndMonotonicity) {
  Prg prg(seed_from_u64(35));
  for (double ratio : {0.0, 0.1, 0.33, 0.5, 0.9, 0.99}) {
    const auto w = random_reals(prg, 1000);
    const auto mask = prune_magnitude(w, ratio);
    const auto kept = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
    EXPECT_EQ(kept, 1000 - static_cast<std::size_t>(std::floor(ratio * 1000)));
    double min_kept = std::numeric_limits<double>::infinity(), max_removed = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (mask[i]) min_kept = std::min(min_kept, std::abs(w[i]));
      else max_removed = std::max(max_removed, std::abs(w[i]));
    }
    EXPECT_GE(min_kept, max_removed);
  }
}

// Exhaustive oracle: optimal 2-means on sorted 1-D data is a contiguous split.
std::vector<double> best_two_means(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> centers;
  for (std::size_t cut = 1; cut < v.size(); ++cut) {
    double a = 0, b = 0;
    for (std::size_t i = 0; i < cut; ++i) a += v[i];
    for (std::size_t i = cut; i < v.size(); ++i) b += v[i];
    a /= static_cast<double>(cut);
    b /= static_cast<double>(v.size() - cut);
    double sse = 0;
    for (std::size_t i = 0; i < v.size(); ++i) sse += std::pow(v[i] - (i < cut ? a : b), 2);
    if (sse < best) {
      best = sse;
      centers = {a, b};
    }
  }
  return centers;
}

TEST(KMeans, TwoMeansOnFourPoints) {
  const std::vector<double> v{0.1, 0.11, 0.9, 0.91};
  const auto oracle = best_two_means(v);
  EXPECT_NEAR(oracle[0], 0.105, 1e-12);
  EXPECT_NEAR(oracle[1], 0.905, 1e-12);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const KMeansResult r = kmeans_1d(v, 2, seed);
    ASSERT_EQ(r.centroids.size(), 2u);
    EXPECT_NEAR(r.centroids[0], oracle[0], 1e-12);
    EXPECT_NEAR(r.centroids[1], oracle[1], 1e-12);
    EXPECT_EQ(r.assignment, (std::vector<std::size_t>{0, 0, 1, 1}));
  }
}

TEST(KMeans, ClampsToDistinctValuesAndIsDeterministic) {
  const std::vector<double> v{0.5, 0.5, -0.25, 0.5};
  const KMeansResult r = kmeans_1d(v, 8, 1);
  EXPECT_EQ(r.centroids, (std::vector<double>{-0.25, 0.5}));
  Prg prg(seed_from_u64(36));
  const auto w = random_reals(prg, 500);
  const KMeansResult a = kmeans_1d(w, 16, 9), b = kmeans_1d(w, 16, 9);
  EXPECT_EQ(a.centroids, b.centroids);
  EXPECT_EQ(a.assignment, b.assignment);
  EXPECT_LE(a.iterations, 100);
}

TEST(Codebook, ExactWhenClustersCoverDistinctValues) {
  const std::vector<double> w{0.5, -0.25, 0.0, 0.5, 1.0, -0.25};
  const std::vector<bool> mask(w.size(), true);
  const CodebookResult r = quantize_codebook(w, mask, 4, 8, 1);
  const auto dense = expand(r.weights);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(dense[i], std::llround(w[i] * 256));
  EXPECT_EQ(r.weights.dense_size, w.size());
}

TEST(Codebook, InvariantsAndErrorDominance) {
  Prg prg(seed_from_u64(37));
  const auto w = random_reals(prg, 400);
  const auto mask = prune_magnitude(w, 0.5);
  for (unsigned bits : {1u, 2u, 3u, 5u}) {
    const CodebookResult r = quantize_codebook(w, mask, bits, 10, 3);
    const PrunedCodebook& pc = r.weights;
    EXPECT_LE(pc.codebook.size(), std::size_t{1} << bits);
    EXPECT_EQ(pc.bits, bits);
    EXPECT_TRUE(std::is_sorted(pc.indices.begin(), pc.indices.end()));
    EXPECT_EQ(std::adjacent_find(pc.indices.begin(), pc.indices.end()), pc.indices.end());
    for (std::size_t i = 0; i < pc.indices.size(); ++i) {
      EXPECT_TRUE(mask[pc.indices[i]]);
      EXPECT_LT(pc.codeword_ids[i], pc.codebook.size());
    }
    EXPECT_NO_THROW(validate_weights(pc, w.size()));

    // Every k-means quantizer beats the best single codeword (the mean).
    std::vector<double> kept;
    for (std::size_t i = 0; i < w.size(); ++i) if (mask[i]) kept.push_back(w[i]);
    const KMeansResult km = kmeans_1d(kept, std::size_t{1} << bits, 3);
    double mean = 0;
    for (double x : kept) mean += x;
    mean /= static_cast<double>(kept.size());
    double sse_k = 0, sse_1 = 0;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      sse_k += std::pow(kept[i] - km.centroids[km.assignment[i]], 2);
      sse_1 += std::pow(kept[i] - mean, 2);
    }
    EXPECT_LE(sse_k, sse_1);
  }
  EXPECT_THROW(quantize_codebook(w, mask, 0, 8, 1), ConfigError);
  EXPECT_THROW(quantize_codebook(w, mask, 13, 8, 1), ConfigError);
}

TEST(Binarize, SignRule) {
  EXPECT_EQ(binarize(std::vector<double>{0.3, -0.2}).plus, (std::vector<bool>{true, false}));
  EXPECT_EQ(binarize(std::vector<double>{0.0}).plus, (std::vector<bool>{true}));
  Prg prg(seed_from_u64(38));
  auto w = random_reals(prg, 100);
  std::vector<double> neg(w.size());
  std::transform(w.begin(), w.end(), neg.begin(), [](double x) { return -x; });
  const auto a = binarize(w).plus, b = binarize(neg).plus;
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NE(a[i], b[i]);
}

TEST(Priority, ReportValues) {
  RealModel m;
  m.input_shape = Shape::hwc(28, 28, 1);
  Prg prg(seed_from_u64(39));
  m.layers.push_back(random_conv(prg, Shape::hwc(28, 28, 1), 5, 4));  // -> 24x24x4
  RealLayer relu;
  relu.spec = LayerSpec::relu(Shape::hwc(24, 24, 4));
  m.layers.push_back(relu);
  m.layers.push_back(random_conv(prg, Shape::hwc(24, 24, 4), 3, 8));  // -> 22x22x8
  RealLayer flat;
  flat.spec = LayerSpec::flatten(Shape::hwc(22, 22, 8));
  m.layers.push_back(flat);
  RealLayer fc;
  fc.spec = LayerSpec::fc(22 * 22 * 8, 10);
  fc.weights = random_reals(prg, fc.spec.weight_count());
  fc.bias = random_reals(prg, 10);
  m.layers.push_back(fc);

  const PruneQuantReport r = layer_priority_report(m);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.rows[0].layer, 0u);
  EXPECT_DOUBLE_EQ(r.rows[0].ciphertexts_per_weight, 784.0);
  EXPECT_DOUBLE_EQ(r.rows[0].weights_per_ciphertext, 4.0 * 25);
  EXPECT_DOUBLE_EQ(r.rows[1].ciphertexts_per_weight, 576.0);
  EXPECT_DOUBLE_EQ(r.rows[2].weights_per_ciphertext, 10.0);
  EXPECT_EQ(r.rows[0].prune_rank, 1u);
  EXPECT_EQ(r.rows[1].prune_rank, 2u);
  EXPECT_EQ(r.rows[2].prune_rank, 3u);

  const std::string csv = r.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "layer,kind,input_dim,ciphertexts_per_weight,weights_per_ciphertext,prune_rank,"
            "quantize_rank,prune_ratio,bits,variant,muladd_before,muladd_after");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(Priority, StrideScalesFanOut) {
  const LayerSpec s = LayerSpec::conv(Shape::hwc(28, 28, 1), 4, 6, 2);
  Model m;
  m.input_shape = s.input;
  Layer l;
  l.spec = s;
  l.weights = DenseInt{std::vector<std::int64_t>(s.weight_count(), 1)};
  l.bias.assign(6, 0);
  m.layers.push_back(l);
  const auto r = layer_priority_report(m);
  EXPECT_DOUBLE_EQ(r.rows[0].ciphertexts_per_weight, 784.0 / 4);
  EXPECT_DOUBLE_EQ(r.rows[0].weights_per_ciphertext, 6.0 * 16 / 4);
}

RealModel one_fc(std::size_t in, std::size_t out, std::uint64_t seed) {
  Prg prg(seed_from_u64(seed));
  RealModel m;
  m.input_shape = Shape::flat(in);
  RealLayer fc;
  fc.spec = LayerSpec::fc(in, out);
  fc.weights = random_reals(prg, in * out);
  fc.bias = random_reals(prg, out);
  m.layers.push_back(fc);
  return m;
}

TEST(CompressModel, PruneNinetyPercentOfThousandWeights) {
  CompressOptions opt;
  opt.prune_ratio = 0.9;
  opt.scale_exp = 12;
  const CompressResult r = compress_model(one_fc(100, 10, 40), opt);
  const auto dense = expand(*r.model.layers[0].weights);
  EXPECT_EQ(std::count_if(dense.begin(), dense.end(), [](auto w) { return w != 0; }), 100);
}

TEST(CompressModel, BinarizeAllLinearLayers) {
  CompressOptions opt;
  opt.binarize = true;
  const CompressResult r = compress_model(real_model_from_json(std::string(toy_model_json("toy-b"))), opt);
  for (const Layer& l : r.model.layers) {
    if (l.spec.is_linear()) EXPECT_STREQ(variant_name(*l.weights), "binary");
  }
  for (const auto& row : r.report.rows) EXPECT_EQ(row.variant, "binary");
}

TEST(CompressModel, ConflictingOptions) {
  CompressOptions opt;
  opt.binarize = true;
  opt.bits = 2;
  EXPECT_THROW(compress_model(one_fc(4, 2, 41), opt), ConfigError);
  opt.bits = 0;
  opt.prune_ratio = 0.5;
  EXPECT_THROW(compress_model(one_fc(4, 2, 41), opt), ConfigError);
  CompressOptions bad;
  bad.prune_ratio = 1.0;
  EXPECT_THROW(compress_model(one_fc(4, 2, 41), bad), ConfigError);
}

TEST(CompressModel, VariantsAgreeWithDenseExpansion) {
  const RealModel real = real_model_from_json(std::string(toy_model_json("toy-b")));
  Prg prg(seed_from_u64(42));
  for (int variant = 0; variant < 3; ++variant) {
    CompressOptions opt;
    if (variant == 1) {
      opt.prune_ratio = 0.5;
      opt.bits = 2;
    }
    if (variant == 2) opt.binarize = true;
    const Model m = compress_model(real, opt).model;
    Model dense = m;
    for (Layer& l : dense.layers) {
      if (l.weights) l.weights = DenseInt{expand(*l.weights)};
    }
    for (int trial = 0; trial < 20; ++trial) {
      const PlainTensor x = toy_input(m, 100 + trial);
      ASSERT_EQ(reference_forward(m, x), reference_forward(dense, x)) << "variant " << variant;
    }
  }
}

TEST(CompressModel, QuantizedModelTracksRealModel) {
  const RealModel real = real_model_from_json(std::string(toy_model_json("toy-a")));
  CompressOptions opt;
  opt.scale_exp = 12;
  const Model m = compress_model(real, opt).model;
  const PlainTensor x = toy_input(m, 5);
  const auto y = dequantize_tensor(reference_forward(m, x));
  const auto ref = real_forward(real, dequantize_tensor(x));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-2);
}

TEST(CompressModel, BatchNormFromJsonIsFolded) {
  const std::string text = R"({"input":[6,6,1],"seed":3,"layers":[
    {"type":"conv","kernel":3,"filters":2,"batchnorm":{"gamma":[2,1],"beta":[0,1],"mean":[0,0],"var":[1,1],"eps":0}},
    {"type":"relu"}]})";
  const RealModel real = real_model_from_json(text);
  ASSERT_TRUE(real.layers[0].bn.has_value());
  const RealLayer folded = fold_bn(real.layers[0], *real.layers[0].bn);
  EXPECT_DOUBLE_EQ(folded.weights[conv_weight_index(folded.spec, 0, 1, 1, 0)],
                   2 * real.layers[0].weights[conv_weight_index(folded.spec, 0, 1, 1, 0)]);
  CompressOptions opt;
  opt.scale_exp = 14;
  const Model m = compress_model(real, opt).model;
  const PlainTensor x = toy_input(m, 1);
  const auto y = dequantize_tensor(reference_forward(m, x));
  const auto ref = real_forward(real, dequantize_tensor(x));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-3);
}

TEST(ModelFiles, RoundTrips) {
  for (const char* name : {"toy-a", "toy-b"}) {
    const RealModel real = real_model_from_json(std::string(toy_model_json(name)));
    const Bytes staged = serialize_real_model(real);
    EXPECT_EQ(std::string(staged.begin(), staged.begin() + 4), "PPMD");
    const RealModel back = parse_real_model(staged);
    EXPECT_EQ(back.layers.size(), real.layers.size());
    EXPECT_EQ(back.layers[0].weights, real.layers[0].weights);
    EXPECT_THROW(parse_model(staged), FormatError);

    for (int variant = 0; variant < 3; ++variant) {
      CompressOptions opt;
      opt.bits = variant == 1 ? 3 : 0;
      opt.binarize = variant == 2;
      const Model m = compress_model(real, opt).model;
      EXPECT_EQ(parse_model(serialize_model(m)), m);
    }
  }
  EXPECT_THROW(parse_model(Bytes{'P', 'P', 'M', 'D', 0, 9}), FormatError);
  EXPECT_THROW(real_model_from_json("{"), FormatError);
}

}  // namespace
}  // namespace popcorn
