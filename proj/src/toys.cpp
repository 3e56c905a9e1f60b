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

#include "popcorn/toys.hpp"

#include "popcorn/error.hpp"
#include "popcorn/random.hpp"

namespace popcorn {

namespace {

constexpr std::string_view kToyA = R"json({
  "name": "toy-a",
  "input": [16],
  "seed": 101,
  "layers": [
    {"type": "fc", "out": 8},
    {"type": "relu"},
    {"type": "fc", "out": 4}
  ]
}
)json";

constexpr std::string_view kToyB = R"json({
  "name": "toy-b",
  "input": [8, 8, 1],
  "seed": 202,
  "layers": [
    {"type": "conv", "kernel": 3, "filters": 4, "stride": 1, "padding": 1},
    {"type": "relu"},
    {"type": "maxpool", "window": 2, "stride": 2},
    {"type": "flatten"},
    {"type": "fc", "out": 10}
  ]
}
)json";

}  // namespace

std::string_view toy_model_json(std::string_view name) {
  if (name == "toy-a") return kToyA;
  if (name == "toy-b") return kToyB;
  throw ConfigError("unknown reference model '" + std::string(name) + "'");
}

Model toy_model(std::string_view name, const CompressOptions& options) {
  return compress_model(real_model_from_json(std::string(toy_model_json(name))), options).model;
}

PlainTensor toy_input(const Model& model, std::uint64_t seed) {
  Prg prg(derive_seed(seed_from_u64(seed), "toy-input"));
  std::vector<double> values(model.input_shape.size());
  for (auto& v : values) {
    v = static_cast<double>(prg.uniform(std::uint64_t{1} << 53)) / static_cast<double>(1ull << 52) - 1.0;
  }
  return quantize_tensor(model.input_shape, values, model.input_scale_exp);
}

}  // namespace popcorn
