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

// Run configuration shared by the tools, and the loopback bench harness.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "popcorn/session.hpp"

namespace popcorn {

/// Everything `serve`, `infer` and `bench` can be told through --config.
struct RunConfig {
  EngineConfig engine;
  std::size_t key_bits = 2048;
  std::uint64_t seed = 1;

  /// Applies one "key=value" setting. Keys: fusion, diff_kernel, min_dummies,
  /// dummy_fraction, rerandomize, key_bits, min_key_bits, seed,
  /// input_bound_bits.
  /// Throws ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// A "key=value" pair, or a path to a file of such lines ('#' comments).
  void apply(const std::string& setting_or_file);
  /// Sorted "key=value" lines describing this configuration.
  std::vector<std::string> echo() const;

  ServerConfig server(std::uint64_t session = 0) const;
  ClientConfig client(std::uint64_t session = 0) const;
};

struct BenchReport {
  std::vector<std::string> config;  // "key=value", echoed as comments
  std::vector<LayerStats> rows;     // per layer, medians over trials
  std::uint64_t trials = 0;
  std::uint64_t mismatches = 0;     // trials whose logits differ from the oracle

  LayerStats total() const;
  /// "# key=value" lines, a header, one row per layer, then "total".
  std::string to_csv() const;
};

inline constexpr const char* kBenchCsvHeader =
    "layer,hmul_plain,bias_hmul_plain,hadd,comparisons,dummy_slots,pair_diff_muladds,"
    "ciphertexts_sent,ciphertexts_received,rounds,bytes_sent,bytes_received,wall_ms";

/// Runs `trials` loopback sessions of `model` on seeded random inputs and
/// checks each result against the plaintext reference.
BenchReport run_bench(const Model& model, const std::string& model_name, std::size_t trials,
                      const RunConfig& cfg);

}  // namespace popcorn
