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

// Runs a server and a client against each other over loopback.

#pragma once

#include <cmath>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "popcorn/session.hpp"

namespace popcorn::testing {

struct LoopbackRun {
  SessionStats server;
  ClientResult client;
  Transcript server_transcript;
  Transcript client_transcript;
};

inline LoopbackRun run_loopback(const Model& model, const PlainTensor& input,
                                ServerConfig scfg, ClientConfig ccfg) {
  LoopbackRun run;
  scfg.transcript = &run.server_transcript;
  ccfg.transcript = &run.client_transcript;
  auto [server_end, client_end] = make_loopback_pair();
  std::exception_ptr server_error;
  std::thread server([&, end = server_end.get()] {
    try {
      run.server = run_server(model, *end, scfg);
    } catch (...) {
      server_error = std::current_exception();
      end->close();
    }
  });
  std::exception_ptr client_error;
  try {
    run.client = run_client(input, *client_end, ccfg);
  } catch (...) {
    client_error = std::current_exception();
    client_end->close();
  }
  server.join();
  if (server_error) std::rethrow_exception(server_error);
  if (client_error) std::rethrow_exception(client_error);
  return run;
}

/// Text stored in the transcript golden file.
inline std::string transcript_golden_text(const Transcript& t) {
  return "digest " + t.digest() + "\n" + t.listing();
}

// --- analytic traffic model ---------------------------------------------------
//
// Derived from the layer list alone, without running the engine.

struct AnalyticRound {
  bool relu = false;
  std::uint64_t ciphertexts = 0;  // each way, dummies included
};

inline std::uint64_t dummies_for(std::uint64_t m, const ProtocolConfig& cfg) {
  const auto frac = static_cast<std::uint64_t>(std::ceil(cfg.dummy_fraction * static_cast<double>(m)));
  return std::max<std::uint64_t>(cfg.min_dummies, frac);
}

inline void tournament(std::uint64_t windows, std::uint64_t m, std::vector<AnalyticRound>& out) {
  for (std::uint64_t c = m; c > 1; c = (c + 1) / 2) out.push_back({false, windows * (c / 2)});
}

inline std::vector<AnalyticRound> analytic_rounds(const Model& model, bool fusion,
                                                  const ProtocolConfig& cfg) {
  std::vector<AnalyticRound> out;
  const auto& L = model.layers;
  for (std::size_t i = 0; i < L.size(); ++i) {
    const LayerSpec& s = L[i].spec;
    if (s.kind == LayerKind::kRelu) {
      if (fusion && i + 1 < L.size() && L[i + 1].spec.kind == LayerKind::kMaxPool) {
        const LayerSpec& mp = L[i + 1].spec;
        const std::uint64_t pooled = mp.output().size();
        tournament(pooled, mp.window * mp.window, out);
        out.push_back({true, pooled + dummies_for(pooled, cfg)});
        ++i;
      } else {
        const std::uint64_t m = s.input.size();
        out.push_back({true, m + dummies_for(m, cfg)});
      }
    } else if (s.kind == LayerKind::kMaxPool) {
      tournament(s.output().size(), s.window * s.window, out);
    }
  }
  return out;
}

struct AnalyticBytes {
  std::uint64_t server_to_client = 0;
  std::uint64_t client_to_server = 0;
};

/// Whole-session traffic. `cb` is the fixed ciphertext width (bytes of n^2),
/// `n_bytes` the minimal big-endian length of n, `meta_bytes` the META body.
inline AnalyticBytes analytic_bytes(const Model& model, bool fusion, const ProtocolConfig& cfg,
                                    std::uint64_t cb, std::uint64_t n_bytes,
                                    std::uint64_t meta_bytes) {
  constexpr std::uint64_t header = 9, count = 4, len = 4, kind = 1;
  const std::uint64_t per_ct = len + cb;
  AnalyticBytes b;
  b.client_to_server += header + 2;                                     // HELLO
  b.server_to_client += header + meta_bytes;                            // META
  b.client_to_server += header + 4 + n_bytes;                           // PUBKEY
  b.client_to_server += header + count + (model.input_shape.size() + 1) * per_ct;  // ENC_INPUT
  for (const auto& r : analytic_rounds(model, fusion, cfg)) {
    b.server_to_client += header + kind + count + r.ciphertexts * per_ct;
    b.client_to_server += header + count + r.ciphertexts * per_ct;
  }
  b.server_to_client += header + count + model.output_shape().size() * per_ct;  // RESULT
  return b;
}

}  // namespace popcorn::testing
