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

// Two-party session: framing, transports, handshake and the server's
// layer-by-layer engine. Frame layout (all integers big-endian):
//
//   u32 body_length | u8 tag | u32 seq | body
//
// Flow: C HELLO, S META, C PUBKEY, C ENC_INPUT, then S BLINDED_BATCH /
// C CLIENT_RESPONSE pairs, then S RESULT. Either side may send ABORT.

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "popcorn/bytes.hpp"
#include "popcorn/encoding.hpp"
#include "popcorn/error.hpp"
#include "popcorn/linear.hpp"
#include "popcorn/model.hpp"
#include "popcorn/protocols.hpp"
#include "popcorn/random.hpp"

namespace popcorn {

inline constexpr std::uint16_t kProtocolVersion = 1;
inline constexpr std::size_t kFrameHeaderBytes = 9;
inline constexpr std::uint32_t kMaxFrameBody = 1u << 30;

enum class MessageType : std::uint8_t {
  kHello = 1,
  kMeta = 2,
  kPubkey = 3,
  kEncInput = 4,
  kBlindedBatch = 5,
  kClientResponse = 6,
  kResult = 7,
  kAbort = 8,
};

const char* to_string(MessageType type);

struct WireMessage {
  MessageType type = MessageType::kHello;
  std::uint32_t seq = 0;
  Bytes body;
};

Bytes encode_frame(const WireMessage& msg);
/// Parses one complete frame; throws FormatError on truncation or an unknown
/// tag.
WireMessage decode_frame(std::span<const std::uint8_t> frame);

/// Reliable byte stream.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(std::span<const std::uint8_t> data) = 0;
  /// Fills `out` completely or throws ProtocolError(kConnectionLost).
  virtual void recv_exact(std::span<std::uint8_t> out) = 0;
  virtual void close() = 0;
};

/// Two connected in-process endpoints.
std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> make_loopback_pair();

class TcpListener {
 public:
  /// Binds host:port; port 0 picks a free port.
  TcpListener(const std::string& host, std::uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  std::unique_ptr<Transport> accept();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

std::unique_ptr<Transport> tcp_connect(const std::string& host, std::uint16_t port);

/// Every frame that crossed a connection, in order, from one party's view.
struct Transcript {
  struct Entry {
    bool outgoing = false;
    Bytes frame;
  };
  std::vector<Entry> entries;

  std::size_t total_bytes() const;
  /// BLAKE2b-256 over (direction byte, frame) for every entry, hex.
  std::string digest() const;
  /// One line per frame: "<direction> <TAG> <length>".
  std::string listing() const;
};

/// Frames messages over a transport, checks sequence numbers and meters
/// bytes in both directions.
class FramedConnection {
 public:
  explicit FramedConnection(Transport& transport, Transcript* transcript = nullptr)
      : transport_(transport), transcript_(transcript) {}

  void send(MessageType type, Bytes body);
  /// Next frame. An ABORT from the peer becomes ProtocolError(kPeerAbort).
  WireMessage recv();
  /// recv() and require `type`, else ProtocolError(kProtocolOrder).
  Bytes expect(MessageType type);
  /// Best-effort ABORT; swallows transport failures.
  void send_abort(AbortReason reason) noexcept;

  std::uint64_t bytes_sent() const { return bytes_sent_; }
  std::uint64_t bytes_received() const { return bytes_received_; }
  std::uint64_t frames_sent() const { return frames_sent_; }
  std::uint64_t frames_received() const { return frames_received_; }

 private:
  Transport& transport_;
  Transcript* transcript_;
  std::uint32_t next_send_seq_ = 0;
  std::uint32_t next_recv_seq_ = 0;
  std::uint64_t bytes_sent_ = 0;
  std::uint64_t bytes_received_ = 0;
  std::uint64_t frames_sent_ = 0;
  std::uint64_t frames_received_ = 0;
};

/// What the client learns about the model.
struct ModelMeta {
  std::uint16_t version = kProtocolVersion;
  Shape input_shape;
  int input_scale_exp = 0;
  int output_scale_exp = 0;
  std::vector<std::uint32_t> activations;  // per layer output count
  mpz_class input_bound = 1;               // max |input integer| accepted

  std::size_t layer_count() const { return activations.size(); }
  Bytes serialize() const;
  static ModelMeta parse(std::span<const std::uint8_t> body);
  static ModelMeta from_model(const Model& model, const mpz_class& input_bound);
  friend bool operator==(const ModelMeta&, const ModelMeta&) = default;
};

struct LayerStats {
  std::string name;  // "setup", "L<i>:<kind>" or "result"
  OpCounter ops;
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_received = 0;
  double wall_ms = 0;

  LayerStats& operator+=(const LayerStats& o);
};

struct SessionStats {
  std::vector<LayerStats> layers;
  std::uint64_t bytes_sent = 0;      // connection meter, whole session
  std::uint64_t bytes_received = 0;
  std::uint64_t round_trips = 0;
  double wall_ms = 0;

  LayerStats total() const;
};

struct EngineConfig {
  ProtocolConfig protocol;
  bool fusion = true;
  bool diff_kernel = false;
  mpz_class input_bound = mpz_class(1) << 20;
  std::size_t min_key_bits = 1024;
};

struct ServerConfig {
  EngineConfig engine;
  Seed seed{};
  Transcript* transcript = nullptr;
};

struct ClientConfig {
  std::size_t key_bits = 2048;
  Seed seed{};
  Transcript* transcript = nullptr;
};

struct ClientResult {
  PlainTensor logits;           // integers at logits.scale_exp
  std::vector<double> scores;   // dequantized logits
  ModelMeta meta;
  SessionStats stats;
};

/// Server side of the layer loop, independent of the transport.
class InferenceEngine {
 public:
  InferenceEngine(const Model& model, EngineConfig cfg);

  /// Evaluates every layer on `input`; `channel` carries protocol rounds.
  /// Appends one LayerStats row per model layer (fused pairs share the relu
  /// row; the absorbed maxpool row is empty) to `stats`.
  EncTensor run(EncTensor input, const Ciphertext& enc_one, const PublicKey& pk,
                const Seed& seed, RoundChannel& channel, SessionStats& stats,
                const FramedConnection* meter = nullptr) const;

  const Model& model() const { return model_; }
  const EngineConfig& config() const { return cfg_; }

 private:
  const Model& model_;
  EngineConfig cfg_;
};

/// Runs one session over `transport`. On any failure the peer gets an ABORT
/// with a coarse reason and the error is rethrown.
SessionStats run_server(const Model& model, Transport& transport, const ServerConfig& cfg);

ClientResult run_client(const PlainTensor& input, Transport& transport,
                        const ClientConfig& cfg);

/// Protocol rounds with the expected fusion rule: ceil(log2 m) + 1 for fused
/// relu+maxpool, ceil(log2 m) for bare maxpool, 1 for bare relu.
std::uint64_t expected_round_trips(const Model& model, bool fusion);

}  // namespace popcorn
