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

#include <fstream>
#include <sstream>
#include <thread>

#include "popcorn/compress.hpp"
#include "popcorn/session.hpp"
#include "popcorn/toys.hpp"
#include "session_util.hpp"

namespace popcorn {
namespace {

using testing::run_loopback;

ServerConfig server_config(std::uint64_t seed) {
  ServerConfig cfg;
  cfg.seed = derive_seed(seed_from_u64(seed), "server");
  return cfg;
}

ClientConfig client_config(std::uint64_t seed, std::size_t bits = 1024) {
  ClientConfig cfg;
  cfg.key_bits = bits;
  cfg.seed = derive_seed(seed_from_u64(seed), "client");
  return cfg;
}

TEST(Session, FrameRoundTrip) {
  WireMessage msg{MessageType::kResult, 7, Bytes{1, 2, 3}};
  Bytes frame = encode_frame(msg);
  ASSERT_EQ(frame.size(), kFrameHeaderBytes + 3);
  EXPECT_EQ(frame[0], 0);
  EXPECT_EQ(frame[3], 3);
  EXPECT_EQ(frame[4], 7);
  EXPECT_EQ(frame[8], 7);
  auto back = decode_frame(frame);
  EXPECT_EQ(back.type, MessageType::kResult);
  EXPECT_EQ(back.seq, 7u);
  EXPECT_EQ(back.body, msg.body);
}

TEST(Session, FrameRejectsUnknownTagAndTruncation) {
  Bytes frame = encode_frame({MessageType::kHello, 0, Bytes{0, 1}});
  Bytes bad = frame;
  bad[4] = 42;
  EXPECT_THROW(decode_frame(bad), FormatError);
  frame.pop_back();
  EXPECT_THROW(decode_frame(frame), FormatError);
}


TEST(Session, ToyAEndToEnd) {
  const Model model = toy_model("toy-a");
  const PlainTensor input = toy_input(model, 1);
  auto run = run_loopback(model, input, server_config(1), client_config(1));
  const PlainTensor expect = reference_forward(model, input);
  EXPECT_EQ(run.client.logits.values, expect.values);
  EXPECT_EQ(run.client.logits.scale_exp, expect.scale_exp);
  EXPECT_EQ(run.server.round_trips, 1u);
  EXPECT_EQ(run.client.stats.round_trips, 1u);
  EXPECT_EQ(run.server.bytes_sent, run.client.stats.bytes_received);
  EXPECT_EQ(run.server.bytes_received, run.client.stats.bytes_sent);
}

TEST(Session, ToyBEndToEndFusedAndUnfused) {
  const Model model = toy_model("toy-b");
  const PlainTensor input = toy_input(model, 2);
  const PlainTensor expect = reference_forward(model, input);
  for (bool fusion : {true, false}) {
    for (bool diff : {false, true}) {
      auto scfg = server_config(2);
      scfg.engine.fusion = fusion;
      scfg.engine.diff_kernel = diff;
      auto run = run_loopback(model, input, scfg, client_config(2));
      EXPECT_EQ(run.client.logits.values, expect.values) << fusion << diff;
      EXPECT_EQ(run.server.round_trips, expected_round_trips(model, fusion));
    }
  }
}

TEST(Session, ByteCountsMatchAnalyticModel) {
  const Model model = toy_model("toy-b");
  const PlainTensor input = toy_input(model, 3);
  for (bool fusion : {true, false}) {
    auto scfg = server_config(3);
    scfg.engine.fusion = fusion;
    const auto run = run_loopback(model, input, scfg, client_config(3));
    const std::uint64_t cb = 256;
    const std::uint64_t meta =
        ModelMeta::from_model(model, scfg.engine.input_bound).serialize().size();
    const auto want = testing::analytic_bytes(model, fusion, scfg.engine.protocol, cb, 128, meta);
    EXPECT_EQ(run.server.bytes_sent, want.server_to_client) << fusion;
    EXPECT_EQ(run.server.bytes_received, want.client_to_server) << fusion;
    EXPECT_EQ(run.server.total().bytes_sent, run.server.bytes_sent);
    EXPECT_EQ(run.server.total().bytes_received, run.server.bytes_received);
    const auto rounds = testing::analytic_rounds(model, fusion, scfg.engine.protocol);
    EXPECT_EQ(run.server.round_trips, rounds.size());
    std::uint64_t cts = 0;
    for (const auto& r : rounds) cts += r.ciphertexts;
    EXPECT_EQ(run.server.total().ops.ciphertexts_received, cts);
  }
}

TEST(Session, StatsRowsAddUp) {
  const Model model = toy_model("toy-b");
  const auto run = run_loopback(model, toy_input(model, 4), server_config(4), client_config(4));
  std::vector<std::string> names;
  for (const auto& row : run.server.layers) names.push_back(row.name);
  EXPECT_EQ(names, (std::vector<std::string>{"setup", "L0:conv", "L1:relu", "L2:maxpool(fused)",
                                             "L3:flatten", "L4:fc", "result"}));
  const LayerStats fused = run.server.layers[2];
  EXPECT_EQ(fused.ops.comparisons, 64u * 4);  // m comparisons per 2x2 window
  EXPECT_EQ(fused.ops.rounds, 3u);
  EXPECT_EQ(run.server.layers[3].ops, OpCounter{});
}

TEST(Session, MetaRoundTripAndContent) {
  const Model model = toy_model("toy-b");
  const ModelMeta meta = ModelMeta::from_model(model, 1 << 20);
  EXPECT_EQ(meta.layer_count(), 5u);
  EXPECT_EQ(meta.activations, (std::vector<std::uint32_t>{256, 256, 64, 64, 10}));
  EXPECT_EQ(meta.input_shape, Shape::hwc(8, 8, 1));
  EXPECT_EQ(ModelMeta::parse(meta.serialize()), meta);
  Bytes bad = meta.serialize();
  bad.push_back(0);
  EXPECT_THROW(ModelMeta::parse(bad), FormatError);
}

TEST(Session, SmallClientKeyIsRejected) {
  const Model model = toy_model("toy-a");
  try {
    run_loopback(model, toy_input(model, 1), server_config(5), client_config(5, 512));
    FAIL() << "expected an abort";
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.reason(), AbortReason::kMalformedFrame);
  }
}

TEST(Session, WrongInputShapeFailsBeforeKeygen) {
  const Model model = toy_model("toy-a");
  const PlainTensor wrong = make_plain(Shape::flat(3), model.input_scale_exp, {1, 2, 3});
  EXPECT_THROW(run_loopback(model, wrong, server_config(6), client_config(6)), Error);
}

TEST(Session, OutOfOrderMessageAborts) {
  const Model model = toy_model("toy-a");
  auto [server_end, client_end] = make_loopback_pair();
  std::thread server([&, end = server_end.get()] {
    try {
      run_server(model, *end, server_config(7));
      ADD_FAILURE() << "server accepted a bad session";
    } catch (const ProtocolError& e) {
      EXPECT_EQ(e.reason(), AbortReason::kProtocolOrder);
    }
  });
  FramedConnection conn(*client_end);
  conn.send(MessageType::kPubkey, Bytes{0, 0, 0, 1, 7});
  try {
    conn.recv();
    ADD_FAILURE() << "expected ABORT";
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.reason(), AbortReason::kPeerAbort);
  }
  server.join();
}

TEST(Session, ServerVanishingMidSessionIsConnectionLoss) {
  const Model model = toy_model("toy-a");
  const PlainTensor input = toy_input(model, 8);
  auto [server_end, client_end] = make_loopback_pair();
  std::thread fake([&, end = server_end.get()] {
    FramedConnection conn(*end);
    conn.expect(MessageType::kHello);
    conn.send(MessageType::kMeta, ModelMeta::from_model(model, 1 << 20).serialize());
    conn.expect(MessageType::kPubkey);
    conn.expect(MessageType::kEncInput);
    end->close();
  });
  try {
    run_client(input, *client_end, client_config(8));
    ADD_FAILURE() << "client finished without a server";
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.reason(), AbortReason::kConnectionLost);
  }
  fake.join();
}

TEST(Session, SequenceNumbersAreChecked) {
  auto [a, b] = make_loopback_pair();
  const Bytes frame = encode_frame({MessageType::kHello, 5, Bytes{0, 1}});
  a->send(frame);
  FramedConnection conn(*b);
  try {
    conn.recv();
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.reason(), AbortReason::kProtocolOrder);
  }
}

TEST(Session, TcpEndToEnd) {
  const Model model = toy_model("toy-a");
  const PlainTensor input = toy_input(model, 9);
  TcpListener listener("127.0.0.1", 0);
  ASSERT_NE(listener.port(), 0);
  SessionStats server_stats;
  std::thread server([&] {
    auto conn = listener.accept();
    server_stats = run_server(model, *conn, server_config(9));
  });
  auto conn = tcp_connect("127.0.0.1", listener.port());
  const ClientResult r = run_client(input, *conn, client_config(9));
  server.join();
  EXPECT_EQ(r.logits, reference_forward(model, input));
  EXPECT_EQ(server_stats.bytes_sent, r.stats.bytes_received);
  EXPECT_THROW(tcp_connect("127.0.0.1", 1), ProtocolError);
}

TEST(Session, TranscriptIsDeterministic) {
  const Model model = toy_model("toy-a");
  const PlainTensor input = toy_input(model, 10);
  const auto a = run_loopback(model, input, server_config(10), client_config(10));
  const auto b = run_loopback(model, input, server_config(10), client_config(10));
  EXPECT_EQ(a.server_transcript.digest(), b.server_transcript.digest());
  EXPECT_EQ(a.client_transcript.digest(), b.client_transcript.digest());
  EXPECT_EQ(a.server_transcript.total_bytes(), a.server.bytes_sent + a.server.bytes_received);
  const auto c = run_loopback(model, input, server_config(11), client_config(10));
  EXPECT_NE(a.server_transcript.digest(), c.server_transcript.digest());
}

// Same activation counts, different weights and filter sizes: the wire sees
// the same frame sequence and lengths.
TEST(Session, TranscriptShapeIgnoresWeightsAndFilterDims) {
  const std::string k3 = R"({"input":[8,8,1],"seed":1,"layers":[
      {"type":"conv","kernel":3,"filters":4,"padding":1},{"type":"relu"},
      {"type":"maxpool","window":2},{"type":"flatten"},{"type":"fc","out":10}]})";
  const std::string k5 = R"({"input":[8,8,1],"seed":2,"layers":[
      {"type":"conv","kernel":5,"filters":4,"padding":2},{"type":"relu"},
      {"type":"maxpool","window":2},{"type":"flatten"},{"type":"fc","out":10}]})";
  CompressOptions pruned;
  pruned.prune_ratio = 0.7;
  pruned.bits = 2;
  const Model a = compress_model(real_model_from_json(k3), {}).model;
  const Model b = compress_model(real_model_from_json(k5), pruned).model;
  const PlainTensor input = toy_input(a, 12);
  const auto ra = run_loopback(a, input, server_config(12), client_config(12));
  const auto rb = run_loopback(b, input, server_config(13), client_config(12));
  EXPECT_EQ(ra.server_transcript.listing(), rb.server_transcript.listing());
  EXPECT_EQ(ra.client.meta, rb.client.meta);
}

TEST(Session, GoldenTranscript) {
  const Model model = toy_model("toy-b");
  const PlainTensor input = toy_input(model, 7);
  ServerConfig scfg;
  scfg.seed = derive_seed(seed_from_u64(2026), "server");
  ClientConfig ccfg;
  ccfg.key_bits = 1024;
  ccfg.seed = derive_seed(seed_from_u64(2026), "client");
  const auto run = run_loopback(model, input, scfg, ccfg);
  const std::string text = testing::transcript_golden_text(run.server_transcript);
  const std::string path = std::string(POPCORN_GOLDEN_DIR) + "/toy_b_transcript.txt";
  if (std::getenv("POPCORN_UPDATE_GOLDEN") != nullptr) {
    std::ofstream(path) << text;
  }
  std::ifstream in(path);
  ASSERT_TRUE(in) << "missing golden file " << path;
  std::stringstream golden;
  golden << in.rdbuf();
  EXPECT_EQ(text, golden.str());
}

}  // namespace
}  // namespace popcorn
