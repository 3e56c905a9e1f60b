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

// Reference networks shipped with the tools (same text as models/*.json).
//
//   toy-a: fc 16->8, relu, fc 8->4
//   toy-b: conv 3x3x1x4 (pad 1) on 8x8x1, relu, maxpool 2/2, flatten, fc 64->10

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "popcorn/compress.hpp"
#include "popcorn/encoding.hpp"

namespace popcorn {

/// JSON description of "toy-a" or "toy-b"; ConfigError otherwise.
std::string_view toy_model_json(std::string_view name);

/// Integerized toy model with dense weights at scale 2^8.
Model toy_model(std::string_view name, const CompressOptions& options = {});

/// Uniform input in [-1, 1) quantized at the model's input scale.
PlainTensor toy_input(const Model& model, std::uint64_t seed);

}  // namespace popcorn
