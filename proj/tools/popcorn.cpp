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

// popcorn: key generation, model compression, serve / infer, plaintext eval,
// bench, selftest.
//
// Exit codes: 0 ok, 1 runtime error, 2 usage error, 3 session aborted,
// 4 result check failed.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "popcorn/bench.hpp"
#include "popcorn/compress.hpp"
#include "popcorn/error.hpp"
#include "popcorn/linear.hpp"
#include "popcorn/paillier.hpp"
#include "popcorn/protocols.hpp"
#include "popcorn/session.hpp"
#include "popcorn/toys.hpp"

namespace fs = std::filesystem;
using namespace popcorn;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitAbort = 3;
constexpr int kExitCheck = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool is_builtin(const std::string& name) { return name == "toy-a" || name == "toy-b"; }

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string read_text(const std::string& path) {
  const Bytes b = read_file(path);
  return std::string(b.begin(), b.end());
}

RealModel load_real_model(const std::string& source) {
  if (is_builtin(source)) return real_model_from_json(std::string(toy_model_json(source)));
  if (ends_with(source, ".json")) return real_model_from_json(read_text(source));
  return parse_real_model(read_file(source));
}

/// Integerized PPMD file, a JSON description or a built-in name; the last two
/// are compressed with default options.
Model load_model(const std::string& source) {
  if (is_builtin(source)) return toy_model(source);
  if (ends_with(source, ".json")) return compress_model(real_model_from_json(read_text(source)), {}).model;
  return parse_model(read_file(source));
}

std::pair<std::string, std::uint16_t> split_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw UsageError("expected host:port, got '" + s + "'");
  const std::string port = s.substr(colon + 1);
  unsigned long p = 0;
  try {
    p = std::stoul(port);
  } catch (const std::exception&) {
    throw UsageError("bad port in '" + s + "'");
  }
  if (p > 65535) throw UsageError("port out of range in '" + s + "'");
  return {s.substr(0, colon), static_cast<std::uint16_t>(p)};
}

RunConfig make_config(const std::vector<std::string>& settings) {
  RunConfig cfg;
  for (const auto& s : settings) cfg.apply(s);
  return cfg;
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

BenchReport single_session_report(const SessionStats& stats, const RunConfig& cfg) {
  BenchReport r;
  r.config = cfg.echo();
  r.rows = stats.layers;
  r.trials = 1;
  return r;
}

// --- keygen ----------------------------------------------------------------

struct KeygenArgs {
  std::size_t bits = 2048;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

int cmd_keygen(const KeygenArgs& a) {
  if (!is_supported_key_size(a.bits)) {
    throw UsageError("--bits must be 512, 1024, 2048 or 3072");
  }
  const std::string pub_path = a.out + ".pub";
  const std::string sec_path = a.out + ".sec";
  if (!a.force && (fs::exists(pub_path) || fs::exists(sec_path))) {
    throw UsageError("refusing to overwrite " + a.out + ".{pub,sec} (use --force)");
  }
  const Seed seed = a.seed ? derive_seed(seed_from_u64(*a.seed), "keygen") : os_seed();
  Prg prg(seed);
  const KeyPair keys = keygen(a.bits, prg);

  // Round-trip check before anything touches disk.
  Prg check(derive_seed(seed, "keygen.check"));
  for (int i = 0; i < 16; ++i) {
    const mpz_class m = check.uniform(keys.pub.n());
    if (decrypt(encrypt(m, keys.pub, check), keys.sec, keys.pub) != m) {
      std::cerr << "keygen: generated key failed the round-trip check\n";
      return kExitCheck;
    }
  }
  write_file(pub_path, serialize_public_key(keys.pub));
  write_file(sec_path, serialize_secret_key(keys.sec));
  std::cout << "wrote " << pub_path << " and " << sec_path << " (" << keys.pub.bit_length()
            << "-bit modulus)\n";
  return 0;
}

// --- compress --------------------------------------------------------------

struct CompressArgs {
  std::string model_in;
  double prune = 0.0;
  unsigned bits = 0;
  bool binarize = false;
  int scale = 8;
  std::uint64_t seed = 1;
  std::string out;
  std::string report;
};

int cmd_compress(const CompressArgs& a) {
  CompressOptions opt;
  opt.prune_ratio = a.prune;
  opt.bits = a.bits;
  opt.binarize = a.binarize;
  opt.scale_exp = a.scale;
  opt.seed = a.seed;
  const CompressResult result = compress_model(load_real_model(a.model_in), opt);
  write_file(a.out, serialize_model(result.model));
  write_output(a.report, result.report.to_csv());
  if (!a.report.empty() && a.report != "-") std::cout << "wrote " << a.out << " and " << a.report << '\n';
  return 0;
}

// --- make-input ------------------------------------------------------------

struct InputArgs {
  std::string model;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_make_input(const InputArgs& a) {
  const Model model = load_model(a.model);
  write_file(a.out, serialize_tensor(toy_input(model, a.seed)));
  std::cout << "wrote " << a.out << " (" << model.input_shape.str() << ", scale 2^"
            << model.input_scale_exp << ")\n";
  return 0;
}

// --- serve -----------------------------------------------------------------

struct ServeArgs {
  std::string model;
  std::string listen = "127.0.0.1:0";
  std::string port_file;
  std::vector<std::string> config;
  std::size_t sessions = 1;
  std::string stats;
};

int cmd_serve(const ServeArgs& a) {
  const Model model = load_model(a.model);
  const RunConfig cfg = make_config(a.config);
  const auto [host, port] = split_endpoint(a.listen);
  TcpListener listener(host, port);
  if (!a.port_file.empty()) {
    // Write-then-rename so a watcher never sees a partial file.
    const std::string tmp = a.port_file + ".tmp";
    write_output(tmp, std::to_string(listener.port()) + "\n");
    fs::rename(tmp, a.port_file);
  }
  std::cerr << "serving on " << host << ":" << listener.port() << '\n';
  int status = 0;
  for (std::size_t s = 0; a.sessions == 0 || s < a.sessions; ++s) {
    auto conn = listener.accept();
    try {
      const SessionStats stats = run_server(model, *conn, cfg.server(s));
      std::cerr << "session " << s << ": " << stats.round_trips << " rounds, "
                << stats.bytes_sent << " B sent, " << stats.bytes_received << " B received\n";
      if (!a.stats.empty()) write_output(a.stats, single_session_report(stats, cfg).to_csv());
    } catch (const ProtocolError& e) {
      std::cerr << "session " << s << " aborted: " << to_string(e.reason()) << " (" << e.what()
                << ")\n";
      status = kExitAbort;
    } catch (const Error& e) {
      // The peer already got an ABORT; keep serving.
      std::cerr << "session " << s << " failed: " << e.what() << '\n';
      status = kExitAbort;
    }
  }
  return status;
}

// --- infer -----------------------------------------------------------------

struct InferArgs {
  std::string input;
  std::string connect;
  std::vector<std::string> config;
  std::string stats;
};

void print_logits(const PlainTensor& logits) {
  const auto scores = dequantize_tensor(logits);
  std::cout << "index,logit,score\n" << std::setprecision(9);
  for (std::size_t i = 0; i < logits.values.size(); ++i) {
    std::cout << i << ',' << logits.values[i] << ',' << scores[i] << '\n';
  }
}

int cmd_infer(const InferArgs& a) {
  const PlainTensor input = parse_tensor(read_file(a.input));
  const RunConfig cfg = make_config(a.config);
  const auto [host, port] = split_endpoint(a.connect);
  auto conn = tcp_connect(host, port);
  const ClientResult result = run_client(input, *conn, cfg.client());
  print_logits(result.logits);
  if (!a.stats.empty()) write_output(a.stats, single_session_report(result.stats, cfg).to_csv());
  return 0;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string model;
  std::string input;
};

/// Plaintext integer forward pass, the oracle for `infer`.
int cmd_eval(const EvalArgs& a) {
  const Model model = load_model(a.model);
  print_logits(reference_forward(model, parse_tensor(read_file(a.input))));
  return 0;
}

// --- bench -----------------------------------------------------------------

struct BenchArgs {
  std::string model = "toy-b";
  std::size_t trials = 3;
  std::string out;
  std::vector<std::string> config;
};

int cmd_bench(const BenchArgs& a) {
  const Model model = load_model(a.model);
  const RunConfig cfg = make_config(a.config);
  const BenchReport report = run_bench(model, a.model, a.trials, cfg);
  write_output(a.out, report.to_csv());
  if (report.mismatches != 0) {
    std::cerr << "bench: " << report.mismatches << " trial(s) disagreed with the plaintext model\n";
    return kExitCheck;
  }
  return 0;
}

// --- selftest --------------------------------------------------------------

int cmd_selftest() {
  int failures = 0;
  auto check = [&](const char* name, bool ok) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << '\n';
    failures += ok ? 0 : 1;
  };

  {
    const KeyPair toy = keygen_from_primes(11, 13);
    Prg prg(seed_from_u64(1));
    bool ok = toy.pub.n() == 143 && toy.sec.lambda() == 60;
    for (long m = 0; m < 143 && ok; ++m) {
      ok = decrypt(encrypt(m, toy.pub, prg), toy.sec, toy.pub) == m;
    }
    check("paillier toy primes round-trip", ok);
  }

  Prg key_prg(seed_from_u64(2));
  const KeyPair keys = keygen(512, key_prg);
  const SignedCodec codec(keys.pub);
  {
    Prg prg(seed_from_u64(3));
    const auto a = encrypt(codec.encode(std::int64_t{9}), keys.pub, prg);
    const auto b = encrypt(codec.encode(std::int64_t{4}), keys.pub, prg);
    const auto d = codec.decode(decrypt(hsub(b, a, keys.pub), keys.sec, keys.pub));
    const auto p = codec.decode(decrypt(hmul_plain(a, std::int64_t{-7}, keys.pub, prg), keys.sec, keys.pub));
    check("paillier homomorphisms", d == -5 && p == -63);
  }
  {
    Prg server(seed_from_u64(4)), client(seed_from_u64(5));
    OpCounter ctr;
    ProtocolConfig pcfg;
    LocalClientChannel channel(keys, codec, client);
    ServerContext ctx{keys.pub, codec, server, ctr, pcfg, channel};
    const PlainTensor x = make_plain(Shape::hwc(4, 4, 1), 0,
                                     {-3, 0, 5, -1, 2, -8, 4, 4, -9, -9, 1, 0, 6, -2, -2, 3});
    const EncTensor ex = encrypt_tensor(x, keys.pub, codec, server);
    const auto relu = decrypt_tensor(secure_relu(ex, ctx), keys, codec).values;
    const auto fused = decrypt_tensor(fused_relu_maxpool(ex, 2, 2, ctx), keys, codec).values;
    check("secure relu", relu == std::vector<std::int64_t>{0, 0, 5, 0, 2, 0, 4, 4, 0, 0, 1, 0, 6, 0, 0, 3});
    check("fused relu+maxpool", fused == std::vector<std::int64_t>{2, 5, 6, 3});
  }
  check("diff kernel cost 3x3 stride 1", pair_diff_cost(3, 1) == 12 && pair_naive_cost(3) == 18);
  {
    RunConfig cfg;
    cfg.key_bits = 512;
    cfg.set("min_key_bits", "512");
    const Model model = toy_model("toy-b");
    const BenchReport report = run_bench(model, "toy-b", 1, cfg);
    check("toy-b session matches plaintext model", report.mismatches == 0);
  }
  return failures == 0 ? 0 : kExitCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"popcorn: oblivious inference over Paillier-encrypted inputs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "popcorn 0.1.0");

  KeygenArgs kg;
  auto* keygen_cmd = app.add_subcommand("keygen", "Generate a Paillier key pair");
  keygen_cmd->add_option("--bits", kg.bits, "Modulus size: 512, 1024, 2048 or 3072");
  keygen_cmd->add_option("--seed", kg.seed, "Deterministic seed (default: OS randomness)");
  keygen_cmd->add_option("--out", kg.out, "Output prefix; writes <out>.pub and <out>.sec")->required();
  keygen_cmd->add_flag("--force", kg.force, "Overwrite existing files");

  CompressArgs ca;
  auto* compress_cmd = app.add_subcommand("compress", "Fold BN, prune, quantize or binarize a model");
  compress_cmd->add_option("--model-in", ca.model_in, "JSON description, staging PPMD file, toy-a or toy-b")->required();
  compress_cmd->add_option("--prune", ca.prune, "Fraction of smallest weights to remove")->check(CLI::Range(0.0, 0.999999));
  compress_cmd->add_option("--bits", ca.bits, "Codebook bits (0 keeps dense weights)");
  compress_cmd->add_flag("--binarize", ca.binarize, "Binarize conv and fc weights");
  compress_cmd->add_option("--scale", ca.scale, "Fixed-point scale exponent f")->check(CLI::Range(0, 30));
  compress_cmd->add_option("--seed", ca.seed, "Seed for k-means++");
  compress_cmd->add_option("--out", ca.out, "Output PPMD file")->required();
  compress_cmd->add_option("--report", ca.report, "Prune/quantize report CSV (default stdout)");

  InputArgs ia;
  auto* input_cmd = app.add_subcommand("make-input", "Write a random PPTN input for a model");
  input_cmd->add_option("--model", ia.model, "Model the input is for")->required();
  input_cmd->add_option("--seed", ia.seed, "Seed");
  input_cmd->add_option("--out", ia.out, "Output PPTN file")->required();

  ServeArgs sa;
  auto* serve_cmd = app.add_subcommand("serve", "Serve a model over TCP");
  serve_cmd->add_option("--model", sa.model, "Integerized PPMD file, JSON, toy-a or toy-b")->required();
  serve_cmd->add_option("--listen", sa.listen, "host:port (port 0 picks one)");
  serve_cmd->add_option("--port-file", sa.port_file, "Write the bound port here");
  serve_cmd->add_option("--config", sa.config, "key=value or a config file; repeatable");
  serve_cmd->add_option("--sessions", sa.sessions, "Sessions to serve before exiting (0 = forever)");
  serve_cmd->add_option("--stats", sa.stats, "Per-layer stats CSV of the last session");

  InferArgs fa;
  auto* infer_cmd = app.add_subcommand("infer", "Run one private inference against a server");
  infer_cmd->add_option("--input", fa.input, "PPTN input tensor")->required();
  infer_cmd->add_option("--connect", fa.connect, "host:port")->required();
  infer_cmd->add_option("--config", fa.config, "key=value or a config file; repeatable");
  infer_cmd->add_option("--stats", fa.stats, "Client stats CSV");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Plaintext forward pass (reference logits)");
  eval_cmd->add_option("--model", ea.model, "Model")->required();
  eval_cmd->add_option("--input", ea.input, "PPTN input tensor")->required();

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "Loopback sessions with per-layer op, byte and time counts");
  bench_cmd->add_option("--model", ba.model, "Model (default toy-b)");
  bench_cmd->add_option("--trials", ba.trials, "Number of sessions")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--out", ba.out, "CSV output (default stdout)");
  bench_cmd->add_option("--config", ba.config, "key=value or a config file; repeatable");

  auto* selftest_cmd = app.add_subcommand("selftest", "Quick end-to-end checks at small key sizes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*keygen_cmd) return cmd_keygen(kg);
    if (*compress_cmd) return cmd_compress(ca);
    if (*input_cmd) return cmd_make_input(ia);
    if (*serve_cmd) return cmd_serve(sa);
    if (*infer_cmd) return cmd_infer(fa);
    if (*eval_cmd) return cmd_eval(ea);
    if (*bench_cmd) return cmd_bench(ba);
    if (*selftest_cmd) return cmd_selftest();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ProtocolError& e) {
    std::cerr << "ABORT " << to_string(e.reason()) << ": " << e.what() << '\n';
    return kExitAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitUsage;
}
