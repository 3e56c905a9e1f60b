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

#include "popcorn/session.hpp"

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sodium.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <sstream>

#include "popcorn/paillier.hpp"

namespace popcorn {

const char* to_string(MessageType type) {
  switch (type) {
    case MessageType::kHello: return "HELLO";
    case MessageType::kMeta: return "META";
    case MessageType::kPubkey: return "PUBKEY";
    case MessageType::kEncInput: return "ENC_INPUT";
    case MessageType::kBlindedBatch: return "BLINDED_BATCH";
    case MessageType::kClientResponse: return "CLIENT_RESPONSE";
    case MessageType::kResult: return "RESULT";
    case MessageType::kAbort: return "ABORT";
  }
  return "UNKNOWN";
}

namespace {

bool valid_tag(std::uint8_t tag) { return tag >= 1 && tag <= 8; }

}  // namespace

Bytes encode_frame(const WireMessage& msg) {
  if (msg.body.size() > kMaxFrameBody) throw FormatError("frame body too large");
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(msg.body.size()));
  w.u8(static_cast<std::uint8_t>(msg.type));
  w.u32(msg.seq);
  w.raw(msg.body);
  return std::move(w).take();
}

WireMessage decode_frame(std::span<const std::uint8_t> frame) {
  ByteReader r(frame);
  const std::uint32_t len = r.u32();
  const std::uint8_t tag = r.u8();
  if (!valid_tag(tag)) throw FormatError("unknown message tag " + std::to_string(tag));
  WireMessage msg;
  msg.type = static_cast<MessageType>(tag);
  msg.seq = r.u32();
  auto body = r.raw(len);
  msg.body.assign(body.begin(), body.end());
  r.expect_done("frame");
  return msg;
}

// ---------------------------------------------------------------------------
// Loopback

namespace {

struct Pipe {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::uint8_t> buf;
  bool closed = false;
};

class LoopbackEnd : public Transport {
 public:
  LoopbackEnd(std::shared_ptr<Pipe> in, std::shared_ptr<Pipe> out)
      : in_(std::move(in)), out_(std::move(out)) {}
  ~LoopbackEnd() override { close(); }

  void send(std::span<const std::uint8_t> data) override {
    std::lock_guard lock(out_->mu);
    if (out_->closed) throw ProtocolError(AbortReason::kConnectionLost, "loopback peer closed");
    out_->buf.insert(out_->buf.end(), data.begin(), data.end());
    out_->cv.notify_all();
  }

  void recv_exact(std::span<std::uint8_t> out) override {
    std::unique_lock lock(in_->mu);
    in_->cv.wait(lock, [&] { return in_->buf.size() >= out.size() || in_->closed; });
    if (in_->buf.size() < out.size()) {
      throw ProtocolError(AbortReason::kConnectionLost, "loopback stream ended");
    }
    std::copy_n(in_->buf.begin(), out.size(), out.begin());
    in_->buf.erase(in_->buf.begin(), in_->buf.begin() + static_cast<std::ptrdiff_t>(out.size()));
  }

  void close() override {
    for (auto* p : {in_.get(), out_.get()}) {
      std::lock_guard lock(p->mu);
      p->closed = true;
      p->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<Pipe> in_;
  std::shared_ptr<Pipe> out_;
};

}  // namespace

std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> make_loopback_pair() {
  auto a_to_b = std::make_shared<Pipe>();
  auto b_to_a = std::make_shared<Pipe>();
  return {std::make_unique<LoopbackEnd>(b_to_a, a_to_b),
          std::make_unique<LoopbackEnd>(a_to_b, b_to_a)};
}

// ---------------------------------------------------------------------------
// TCP

namespace {

class TcpStream : public Transport {
 public:
  explicit TcpStream(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  ~TcpStream() override { close(); }

  void send(std::span<const std::uint8_t> data) override {
    std::size_t done = 0;
    while (done < data.size()) {
      const ssize_t n = ::send(fd_, data.data() + done, data.size() - done, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw ProtocolError(AbortReason::kConnectionLost, "tcp send failed");
      done += static_cast<std::size_t>(n);
    }
  }

  void recv_exact(std::span<std::uint8_t> out) override {
    std::size_t done = 0;
    while (done < out.size()) {
      const ssize_t n = ::recv(fd_, out.data() + done, out.size() - done, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw ProtocolError(AbortReason::kConnectionLost, "tcp stream ended");
      done += static_cast<std::size_t>(n);
    }
  }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_;
};

addrinfo* resolve(const std::string& host, std::uint16_t port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res);
  if (rc != 0) throw ConfigError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  return res;
}

}  // namespace

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  addrinfo* res = resolve(host, port, true);
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 16) == 0) {
      fd_ = fd;
      break;
    }
    ::close(fd);
  }
  ::freeaddrinfo(res);
  if (fd_ < 0) throw ConfigError("cannot listen on " + host + ":" + std::to_string(port));
  sockaddr_storage addr{};
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = addr.ss_family == AF_INET6
              ? ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port)
              : ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Transport> TcpListener::accept() {
  for (;;) {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) return std::make_unique<TcpStream>(fd);
    if (errno != EINTR) throw ProtocolError(AbortReason::kConnectionLost, "accept failed");
  }
}

std::unique_ptr<Transport> tcp_connect(const std::string& host, std::uint16_t port) {
  addrinfo* res = resolve(host, port, false);
  int connected = -1;
  for (addrinfo* ai = res; ai != nullptr && connected < 0; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
      connected = fd;
    } else {
      ::close(fd);
    }
  }
  ::freeaddrinfo(res);
  if (connected < 0) {
    throw ProtocolError(AbortReason::kConnectionLost,
                        "cannot connect to " + host + ":" + std::to_string(port));
  }
  return std::make_unique<TcpStream>(connected);
}

// ---------------------------------------------------------------------------
// Transcript and framed connection

std::size_t Transcript::total_bytes() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.frame.size();
  return n;
}

std::string Transcript::digest() const {
  if (sodium_init() < 0) throw Error("libsodium initialisation failed");
  crypto_generichash_state st;
  crypto_generichash_init(&st, nullptr, 0, 32);
  for (const auto& e : entries) {
    const std::uint8_t dir = e.outgoing ? 1 : 0;
    crypto_generichash_update(&st, &dir, 1);
    crypto_generichash_update(&st, e.frame.data(), e.frame.size());
  }
  std::array<std::uint8_t, 32> out{};
  crypto_generichash_final(&st, out.data(), out.size());
  return to_hex(out);
}

std::string Transcript::listing() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    const auto msg = decode_frame(e.frame);
    os << (e.outgoing ? "> " : "< ") << to_string(msg.type) << ' ' << e.frame.size() << '\n';
  }
  return os.str();
}

void FramedConnection::send(MessageType type, Bytes body) {
  WireMessage msg{type, next_send_seq_++, std::move(body)};
  Bytes frame = encode_frame(msg);
  transport_.send(frame);
  bytes_sent_ += frame.size();
  ++frames_sent_;
  if (transcript_ != nullptr) transcript_->entries.push_back({true, std::move(frame)});
}

WireMessage FramedConnection::recv() {
  std::array<std::uint8_t, kFrameHeaderBytes> header{};
  transport_.recv_exact(header);
  ByteReader hr(header);
  const std::uint32_t len = hr.u32();
  const std::uint8_t tag = hr.u8();
  const std::uint32_t seq = hr.u32();
  if (len > kMaxFrameBody) throw ProtocolError(AbortReason::kMalformedFrame, "frame too large");
  if (!valid_tag(tag)) throw ProtocolError(AbortReason::kMalformedFrame, "unknown message tag");
  Bytes frame(kFrameHeaderBytes + len);
  std::copy(header.begin(), header.end(), frame.begin());
  transport_.recv_exact(std::span(frame).subspan(kFrameHeaderBytes));
  bytes_received_ += frame.size();
  ++frames_received_;
  if (seq != next_recv_seq_) {
    throw ProtocolError(AbortReason::kProtocolOrder, "unexpected sequence number");
  }
  ++next_recv_seq_;
  WireMessage msg;
  msg.type = static_cast<MessageType>(tag);
  msg.seq = seq;
  msg.body.assign(frame.begin() + kFrameHeaderBytes, frame.end());
  if (transcript_ != nullptr) transcript_->entries.push_back({false, std::move(frame)});
  if (msg.type == MessageType::kAbort) {
    const auto reason = msg.body.size() == 1 ? static_cast<AbortReason>(msg.body[0])
                                             : AbortReason::kUnspecified;
    throw ProtocolError(AbortReason::kPeerAbort,
                        std::string("peer aborted: ") + to_string(reason));
  }
  return msg;
}

Bytes FramedConnection::expect(MessageType type) {
  WireMessage msg = recv();
  if (msg.type != type) {
    throw ProtocolError(AbortReason::kProtocolOrder, std::string("expected ") + to_string(type) +
                                                         ", got " + to_string(msg.type));
  }
  return std::move(msg.body);
}

void FramedConnection::send_abort(AbortReason reason) noexcept {
  try {
    send(MessageType::kAbort, Bytes{static_cast<std::uint8_t>(reason)});
  } catch (...) {
  }
}

// ---------------------------------------------------------------------------
// Model metadata

Bytes ModelMeta::serialize() const {
  ByteWriter w;
  w.u16(version);
  w.u8(static_cast<std::uint8_t>(input_shape.rank()));
  for (auto d : input_shape.dims) w.u32(static_cast<std::uint32_t>(d));
  w.i16(static_cast<std::int16_t>(input_scale_exp));
  w.i16(static_cast<std::int16_t>(output_scale_exp));
  w.u16(static_cast<std::uint16_t>(activations.size()));
  for (auto a : activations) w.u32(a);
  w.mpz(input_bound);
  return std::move(w).take();
}

ModelMeta ModelMeta::parse(std::span<const std::uint8_t> body) {
  ByteReader r(body);
  ModelMeta m;
  m.version = r.u16();
  const std::size_t rank = r.u8();
  if (rank == 0 || rank > 3) throw FormatError("META: bad input rank");
  for (std::size_t i = 0; i < rank; ++i) m.input_shape.dims.push_back(r.u32());
  m.input_scale_exp = r.i16();
  m.output_scale_exp = r.i16();
  const std::size_t layers = r.u16();
  for (std::size_t i = 0; i < layers; ++i) m.activations.push_back(r.u32());
  m.input_bound = r.mpz();
  r.expect_done("META");
  if (m.activations.empty()) throw FormatError("META: model has no layers");
  if (m.input_bound < 1) throw FormatError("META: input bound must be positive");
  return m;
}

ModelMeta ModelMeta::from_model(const Model& model, const mpz_class& input_bound) {
  ModelMeta m;
  m.input_shape = model.input_shape;
  m.input_scale_exp = model.input_scale_exp;
  m.output_scale_exp = model.output_scale_exp();
  for (const auto& layer : model.layers) {
    m.activations.push_back(static_cast<std::uint32_t>(layer.spec.output().size()));
  }
  m.input_bound = input_bound;
  return m;
}

// ---------------------------------------------------------------------------
// Stats

LayerStats& LayerStats::operator+=(const LayerStats& o) {
  ops += o.ops;
  bytes_sent += o.bytes_sent;
  bytes_received += o.bytes_received;
  wall_ms += o.wall_ms;
  return *this;
}

LayerStats SessionStats::total() const {
  LayerStats t;
  t.name = "total";
  for (const auto& l : layers) t += l;
  return t;
}

// ---------------------------------------------------------------------------
// Engine

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void write_cells(ByteWriter& w, std::span<const Ciphertext> cells, const PublicKey& pk) {
  w.u32(static_cast<std::uint32_t>(cells.size()));
  for (const auto& c : cells) write_ciphertext(w, c, pk);
}

std::vector<Ciphertext> read_cells(ByteReader& r, const PublicKey& pk) {
  const std::uint32_t count = r.u32();
  // Each cell needs at least its length prefix plus the fixed width.
  if (static_cast<std::uint64_t>(count) * (4 + pk.ciphertext_bytes()) > r.remaining()) {
    throw FormatError("ciphertext count exceeds frame");
  }
  std::vector<Ciphertext> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) out.push_back(read_ciphertext(r, pk));
  return out;
}

/// Sends each batch as BLINDED_BATCH and waits for the CLIENT_RESPONSE.
class NetworkChannel : public RoundChannel {
 public:
  NetworkChannel(FramedConnection& conn, const PublicKey& pk) : conn_(conn), pk_(pk) {}

  std::vector<Ciphertext> round_trip(const BlindedBatch& batch) override {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(batch.kind));
    write_cells(w, batch.cells, pk_);
    conn_.send(MessageType::kBlindedBatch, std::move(w).take());
    Bytes body = conn_.expect(MessageType::kClientResponse);
    ByteReader r(body);
    auto cells = read_cells(r, pk_);
    r.expect_done("CLIENT_RESPONSE");
    return cells;
  }

 private:
  FramedConnection& conn_;
  const PublicKey& pk_;
};

/// Pool geometry after layer `i` when the diff kernel can seed round one:
/// conv -> maxpool, or conv -> relu -> maxpool with fusion on, with
/// non-overlapping windows.
std::optional<std::size_t> diff_pool_index(const Model& model, std::size_t i, bool fusion) {
  const Layer& conv = model.layers[i];
  if (conv.spec.kind != LayerKind::kConv || !conv.weights ||
      std::holds_alternative<BinaryWeights>(*conv.weights)) {
    return std::nullopt;
  }
  std::size_t p = i + 1;
  if (p < model.layers.size() && model.layers[p].spec.kind == LayerKind::kRelu) {
    if (!fusion) return std::nullopt;
    ++p;
  }
  if (p >= model.layers.size() || model.layers[p].spec.kind != LayerKind::kMaxPool) {
    return std::nullopt;
  }
  const LayerSpec& pool = model.layers[p].spec;
  if (pool.window < 2 || pool.window != pool.stride) return std::nullopt;
  return p;
}

}  // namespace

InferenceEngine::InferenceEngine(const Model& model, EngineConfig cfg)
    : model_(model), cfg_(std::move(cfg)) {
  model_.validate();
  cfg_.protocol.validate();
  if (cfg_.input_bound < 1) throw ConfigError("input bound must be positive");
}

EncTensor InferenceEngine::run(EncTensor x, const Ciphertext& enc_one, const PublicKey& pk,
                               const Seed& seed, RoundChannel& channel, SessionStats& stats,
                               const FramedConnection* meter) const {
  const SignedCodec codec(pk);
  std::optional<std::vector<WindowFirstRound>> first;
  const auto& layers = model_.layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& layer = layers[i];
    const auto t0 = Clock::now();
    const std::uint64_t sent0 = meter ? meter->bytes_sent() : 0;
    const std::uint64_t recv0 = meter ? meter->bytes_received() : 0;
    const std::uint64_t rounds0 = stats.round_trips;
    Prg prg(derive_seed(seed, "server.layer", i));
    LayerStats row;
    row.name = "L" + std::to_string(i) + ":" + to_string(layer.spec.kind);
    LinearContext lctx{pk, codec, enc_one, prg, row.ops};
    ServerContext sctx{pk, codec, prg, row.ops, cfg_.protocol, channel};
    bool absorbed_next = false;

    switch (layer.spec.kind) {
      case LayerKind::kConv:
      case LayerKind::kFc: {
        const auto pool_at = cfg_.diff_kernel ? diff_pool_index(model_, i, cfg_.fusion)
                                              : std::nullopt;
        if (!pool_at) {
          x = eval_linear(x, layer, lctx);
          break;
        }
        const LayerSpec& pool = layers[*pool_at].spec;
        const ConvDiffPlan plan = plan_conv_diffs(layer.spec, pool.window, pool.stride, &prg);
        const Shape out = layer.spec.output();
        const std::size_t channels = layer.spec.out_c;
        std::vector<bool> needed(out.size(), false);
        for (std::size_t w = 0; w < plan.pairs.size(); ++w) {
          for (std::size_t k = 0; k < channels; ++k) {
            for (const auto& p : plan.pairs[w]) needed[hwc_index(out, p.jy, p.jx, k)] = true;
            for (const auto& [cy, cx] : plan.carry[w]) needed[hwc_index(out, cy, cx, k)] = true;
          }
        }
        EncTensor conv_out = eval_conv(x, layer, lctx, &needed);
        const Shape pooled = Shape::hwc(plan.pooled_h, plan.pooled_w, channels);
        std::vector<WindowFirstRound> rounds(pooled.size());
        for (std::size_t py = 0; py < plan.pooled_h; ++py) {
          for (std::size_t px = 0; px < plan.pooled_w; ++px) {
            const std::size_t w = py * plan.pooled_w + px;
            for (std::size_t k = 0; k < channels; ++k) {
              auto& r = rounds[hwc_index(pooled, py, px, k)];
              for (const auto& p : plan.pairs[w]) {
                r.diffs.push_back(eval_pair_diff(x, layer, p, k, lctx));
                r.xj.push_back(conv_out.cells[hwc_index(out, p.jy, p.jx, k)]);
              }
              for (const auto& [cy, cx] : plan.carry[w]) {
                r.carry.push_back(conv_out.cells[hwc_index(out, cy, cx, k)]);
              }
            }
          }
        }
        first = std::move(rounds);
        x = std::move(conv_out);
        break;
      }
      case LayerKind::kRelu: {
        const bool fuse = cfg_.fusion && i + 1 < layers.size() &&
                          layers[i + 1].spec.kind == LayerKind::kMaxPool;
        if (fuse) {
          const LayerSpec& pool = layers[i + 1].spec;
          x = fused_relu_maxpool(x, pool.window, pool.stride, sctx,
                                 first ? &*first : nullptr);
          first.reset();
          absorbed_next = true;
        } else {
          x = secure_relu(x, sctx);
        }
        break;
      }
      case LayerKind::kMaxPool:
        x = secure_maxpool(x, layer.spec.window, layer.spec.stride, sctx,
                           first ? &*first : nullptr);
        first.reset();
        break;
      case LayerKind::kFlatten:
        x.shape = Shape::flat(x.cells.size());
        break;
    }

    stats.round_trips = rounds0 + row.ops.rounds;
    row.bytes_sent = meter ? meter->bytes_sent() - sent0 : 0;
    row.bytes_received = meter ? meter->bytes_received() - recv0 : 0;
    row.wall_ms = ms_since(t0);
    stats.layers.push_back(std::move(row));
    if (absorbed_next) {
      ++i;
      LayerStats empty;
      empty.name = "L" + std::to_string(i) + ":maxpool(fused)";
      stats.layers.push_back(std::move(empty));
    }
  }
  return x;
}

std::uint64_t expected_round_trips(const Model& model, bool fusion) {
  std::uint64_t rounds = 0;
  const auto& layers = model.layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& spec = layers[i].spec;
    if (spec.kind == LayerKind::kRelu) {
      if (fusion && i + 1 < layers.size() && layers[i + 1].spec.kind == LayerKind::kMaxPool) {
        rounds += tournament_rounds(layers[i + 1].spec.window * layers[i + 1].spec.window) + 1;
        ++i;
      } else {
        rounds += 1;
      }
    } else if (spec.kind == LayerKind::kMaxPool) {
      rounds += tournament_rounds(spec.window * spec.window);
    }
  }
  return rounds;
}

// ---------------------------------------------------------------------------
// Session drivers

namespace {

AbortReason reason_for(const std::exception& e) {
  if (const auto* p = dynamic_cast<const ProtocolError*>(&e)) return p->reason();
  if (dynamic_cast<const OverflowError*>(&e) != nullptr) return AbortReason::kBoundOverflow;
  if (dynamic_cast<const ShapeError*>(&e) != nullptr) return AbortReason::kShapeMismatch;
  if (dynamic_cast<const FormatError*>(&e) != nullptr) return AbortReason::kMalformedFrame;
  if (dynamic_cast<const DomainError*>(&e) != nullptr) return AbortReason::kMalformedFrame;
  return AbortReason::kUnspecified;
}

/// Sends ABORT unless the failure came from the peer or the link itself.
[[noreturn]] void abort_and_rethrow(FramedConnection& conn, const std::exception& e) {
  const AbortReason reason = reason_for(e);
  if (reason != AbortReason::kPeerAbort && reason != AbortReason::kConnectionLost) {
    conn.send_abort(reason);
  }
  throw;
}

PublicKey parse_session_key(std::span<const std::uint8_t> body, std::size_t min_bits) {
  ByteReader r(body);
  mpz_class n = r.mpz();
  r.expect_done("PUBKEY");
  PublicKey pk(std::move(n));
  if (!is_supported_key_size(pk.bit_length()) || pk.bit_length() < min_bits) {
    throw ProtocolError(AbortReason::kMalformedFrame, "unsupported client key size");
  }
  return pk;
}

}  // namespace

SessionStats run_server(const Model& model, Transport& transport, const ServerConfig& cfg) {
  FramedConnection conn(transport, cfg.transcript);
  SessionStats stats;
  const auto t_start = Clock::now();
  try {
    const InferenceEngine engine(model, cfg.engine);
    LayerStats setup;
    setup.name = "setup";

    const Bytes hello_body = conn.expect(MessageType::kHello);
    ByteReader hello(hello_body);
    const std::uint16_t version = hello.u16();
    hello.expect_done("HELLO");
    if (version != kProtocolVersion) {
      throw ProtocolError(AbortReason::kVersionMismatch, "unsupported protocol version");
    }
    conn.send(MessageType::kMeta,
              ModelMeta::from_model(model, cfg.engine.input_bound).serialize());
    const PublicKey pk = parse_session_key(conn.expect(MessageType::kPubkey),
                                           cfg.engine.min_key_bits);

    Bytes input_body = conn.expect(MessageType::kEncInput);
    ByteReader ir(input_body);
    EncTensor x;
    x.shape = model.input_shape;
    x.scale_exp = model.input_scale_exp;
    x.bound = cfg.engine.input_bound;
    x.cells = read_cells(ir, pk);
    const Ciphertext enc_one = read_ciphertext(ir, pk);
    ir.expect_done("ENC_INPUT");
    if (x.cells.size() != x.shape.size()) {
      throw ProtocolError(AbortReason::kShapeMismatch, "input size does not match the model");
    }
    setup.bytes_sent = conn.bytes_sent();
    setup.bytes_received = conn.bytes_received();
    setup.wall_ms = ms_since(t_start);
    stats.layers.push_back(setup);

    NetworkChannel channel(conn, pk);
    EncTensor y = engine.run(std::move(x), enc_one, pk, cfg.seed, channel, stats, &conn);

    LayerStats result;
    result.name = "result";
    const auto t_result = Clock::now();
    const std::uint64_t sent0 = conn.bytes_sent();
    if (cfg.engine.protocol.rerandomize) {
      Prg prg(derive_seed(cfg.seed, "server.result"));
      for (auto& c : y.cells) c = rerandomize(c, pk, prg);
      result.ops.hadd += y.cells.size();
    }
    ByteWriter w;
    write_cells(w, y.cells, pk);
    conn.send(MessageType::kResult, std::move(w).take());
    result.ops.ciphertexts_sent += y.cells.size();
    result.bytes_sent = conn.bytes_sent() - sent0;
    result.wall_ms = ms_since(t_result);
    stats.layers.push_back(result);
  } catch (const std::exception& e) {
    abort_and_rethrow(conn, e);
  }
  stats.bytes_sent = conn.bytes_sent();
  stats.bytes_received = conn.bytes_received();
  stats.wall_ms = ms_since(t_start);
  return stats;
}

ClientResult run_client(const PlainTensor& input, Transport& transport, const ClientConfig& cfg) {
  FramedConnection conn(transport, cfg.transcript);
  ClientResult out;
  const auto t_start = Clock::now();
  LayerStats row;
  row.name = "session";
  try {
    ByteWriter hello;
    hello.u16(kProtocolVersion);
    conn.send(MessageType::kHello, std::move(hello).take());
    out.meta = ModelMeta::parse(conn.expect(MessageType::kMeta));
    const ModelMeta& meta = out.meta;
    if (meta.version != kProtocolVersion) {
      throw ProtocolError(AbortReason::kVersionMismatch, "server speaks another version");
    }
    if (!(meta.input_shape == input.shape) || meta.input_scale_exp != input.scale_exp) {
      throw ShapeError("input " + input.shape.str() + " does not match the served model " +
                       meta.input_shape.str());
    }
    if (input.values.size() != input.shape.size()) throw ShapeError("input size mismatch");
    if (input.magnitude() > meta.input_bound) {
      throw OverflowError("input exceeds the bound the server certified");
    }

    Prg key_prg(derive_seed(cfg.seed, "client.keygen"));
    Prg enc_prg(derive_seed(cfg.seed, "client.encrypt"));
    Prg resp_prg(derive_seed(cfg.seed, "client.respond"));
    const KeyPair keys = keygen(cfg.key_bits, key_prg);
    const SignedCodec codec(keys.pub);
    {
      ByteWriter w;
      w.mpz(keys.pub.n());
      conn.send(MessageType::kPubkey, std::move(w).take());
    }
    {
      EncTensor x = encrypt_tensor(input, keys.pub, codec, enc_prg);
      const Ciphertext one = encrypt(1, keys.pub, enc_prg);
      ByteWriter w;
      write_cells(w, x.cells, keys.pub);
      write_ciphertext(w, one, keys.pub);
      conn.send(MessageType::kEncInput, std::move(w).take());
      row.ops.ciphertexts_sent += x.cells.size() + 1;
    }

    for (;;) {
      WireMessage msg = conn.recv();
      if (msg.type == MessageType::kBlindedBatch) {
        ByteReader r(msg.body);
        const std::uint8_t kind = r.u8();
        if (kind != static_cast<std::uint8_t>(RoundKind::kRelu) &&
            kind != static_cast<std::uint8_t>(RoundKind::kMax)) {
          throw ProtocolError(AbortReason::kMalformedFrame, "unknown round kind");
        }
        BlindedBatch batch{static_cast<RoundKind>(kind), read_cells(r, keys.pub)};
        r.expect_done("BLINDED_BATCH");
        auto responses = client_respond(batch, keys, codec, resp_prg);
        ByteWriter w;
        write_cells(w, responses, keys.pub);
        conn.send(MessageType::kClientResponse, std::move(w).take());
        row.ops.rounds += 1;
        row.ops.ciphertexts_received += batch.cells.size();
        row.ops.ciphertexts_sent += responses.size();
        continue;
      }
      if (msg.type != MessageType::kResult) {
        throw ProtocolError(AbortReason::kProtocolOrder,
                            std::string("unexpected ") + to_string(msg.type));
      }
      ByteReader r(msg.body);
      auto cells = read_cells(r, keys.pub);
      r.expect_done("RESULT");
      if (cells.size() != meta.activations.back()) {
        throw ProtocolError(AbortReason::kShapeMismatch, "result size does not match META");
      }
      row.ops.ciphertexts_received += cells.size();
      EncTensor y;
      y.shape = Shape::flat(cells.size());
      y.scale_exp = meta.output_scale_exp;
      y.cells = std::move(cells);
      out.logits = decrypt_tensor(y, keys, codec);
      out.scores = dequantize_tensor(out.logits);
      break;
    }
  } catch (const std::exception& e) {
    abort_and_rethrow(conn, e);
  }
  row.bytes_sent = conn.bytes_sent();
  row.bytes_received = conn.bytes_received();
  row.wall_ms = ms_since(t_start);
  out.stats.layers.push_back(row);
  out.stats.bytes_sent = conn.bytes_sent();
  out.stats.bytes_received = conn.bytes_received();
  out.stats.round_trips = row.ops.rounds;
  out.stats.wall_ms = row.wall_ms;
  return out;
}

}  // namespace popcorn
