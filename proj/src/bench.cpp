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

#include "popcorn/bench.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "popcorn/error.hpp"
#include "popcorn/toys.hpp"

namespace popcorn {

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected on/off, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto out = std::stoull(v, &used, 0);
    if (used == v.size() && v.find('-') == std::string::npos) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "fusion") {
    engine.fusion = parse_bool(key, value);
  } else if (key == "diff_kernel") {
    engine.diff_kernel = parse_bool(key, value);
  } else if (key == "rerandomize") {
    engine.protocol.rerandomize = parse_bool(key, value);
  } else if (key == "min_dummies") {
    engine.protocol.min_dummies = parse_u64(key, value);
  } else if (key == "dummy_fraction") {
    try {
      engine.protocol.dummy_fraction = std::stod(value);
    } catch (const std::exception&) {
      throw ConfigError("dummy_fraction: expected a number");
    }
  } else if (key == "key_bits") {
    key_bits = parse_u64(key, value);
    if (!is_supported_key_size(key_bits)) {
      throw ConfigError("key_bits must be 512, 1024, 2048 or 3072");
    }
  } else if (key == "min_key_bits") {
    engine.min_key_bits = parse_u64(key, value);
    if (!is_supported_key_size(engine.min_key_bits)) {
      throw ConfigError("min_key_bits must be 512, 1024, 2048 or 3072");
    }
  } else if (key == "seed") {
    seed = parse_u64(key, value);
  } else if (key == "input_bound_bits") {
    const auto bits = parse_u64(key, value);
    if (bits < 1 || bits > 90) throw ConfigError("input_bound_bits must be in [1, 90]");
    engine.input_bound = mpz_class(1) << static_cast<unsigned>(bits);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
  engine.protocol.validate();
}

void RunConfig::apply(const std::string& setting_or_file) {
  const auto eq = setting_or_file.find('=');
  if (eq != std::string::npos) {
    set(trim(setting_or_file.substr(0, eq)), trim(setting_or_file.substr(eq + 1)));
    return;
  }
  std::ifstream in(setting_or_file);
  if (!in) throw ConfigError("cannot read config file " + setting_or_file);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    if (line.find('=') == std::string::npos) throw ConfigError("config line without '=': " + line);
    apply(line);
  }
}

std::vector<std::string> RunConfig::echo() const {
  const auto on = [](bool b) { return b ? "on" : "off"; };
  std::ostringstream frac;
  frac << engine.protocol.dummy_fraction;
  std::vector<std::string> lines{
      std::string("diff_kernel=") + on(engine.diff_kernel),
      "dummy_fraction=" + frac.str(),
      std::string("fusion=") + on(engine.fusion),
      "input_bound_bits=" + std::to_string(mpz_sizeinbase(engine.input_bound.get_mpz_t(), 2) - 1),
      "key_bits=" + std::to_string(key_bits),
      "min_dummies=" + std::to_string(engine.protocol.min_dummies),
      "min_key_bits=" + std::to_string(engine.min_key_bits),
      std::string("rerandomize=") + on(engine.protocol.rerandomize),
      "seed=" + std::to_string(seed),
  };
  std::sort(lines.begin(), lines.end());
  return lines;
}

ServerConfig RunConfig::server(std::uint64_t session) const {
  ServerConfig out;
  out.engine = engine;
  out.seed = derive_seed(seed_from_u64(seed), "server", session);
  return out;
}

ClientConfig RunConfig::client(std::uint64_t session) const {
  ClientConfig out;
  out.key_bits = key_bits;
  out.seed = derive_seed(seed_from_u64(seed), "client", session);
  return out;
}

LayerStats BenchReport::total() const {
  LayerStats t;
  t.name = "total";
  for (const auto& r : rows) t += r;
  return t;
}

std::string BenchReport::to_csv() const {
  std::ostringstream os;
  for (const auto& line : config) os << "# " << line << '\n';
  os << kBenchCsvHeader << '\n';
  auto emit = [&](const LayerStats& r) {
    const OpCounter& o = r.ops;
    os << r.name << ',' << o.hmul_plain << ',' << o.bias_hmul_plain << ',' << o.hadd << ','
       << o.comparisons << ',' << o.dummy_slots << ',' << o.pair_diff_muladds << ','
       << o.ciphertexts_sent << ',' << o.ciphertexts_received << ',' << o.rounds << ','
       << r.bytes_sent << ',' << r.bytes_received << ',' << std::fixed << std::setprecision(3)
       << r.wall_ms << std::defaultfloat << '\n';
  };
  for (const auto& r : rows) emit(r);
  emit(total());
  return os.str();
}

namespace {

template <class T>
T median(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  if (v.size() % 2 == 1) return v[mid];
  return v[mid - 1] + (v[mid] - v[mid - 1]) / 2;
}

}  // namespace

BenchReport run_bench(const Model& model, const std::string& model_name, std::size_t trials,
                      const RunConfig& cfg) {
  if (trials == 0) throw ConfigError("bench needs at least one trial");
  BenchReport report;
  report.config = cfg.echo();
  report.config.push_back("model=" + model_name);
  report.config.push_back("scale_exp=" + std::to_string(model.input_scale_exp));
  report.config.push_back("trials=" + std::to_string(trials));
  std::sort(report.config.begin(), report.config.end());
  report.trials = trials;

  std::vector<std::vector<LayerStats>> per_trial;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const PlainTensor input = toy_input(model, cfg.seed * 1000003 + trial);
    auto [server_end, client_end] = make_loopback_pair();
    SessionStats server_stats;
    std::exception_ptr server_error;
    std::thread server([&, end = server_end.get()] {
      try {
        server_stats = run_server(model, *end, cfg.server(trial));
      } catch (...) {
        server_error = std::current_exception();
        end->close();
      }
    });
    ClientResult client;
    try {
      client = run_client(input, *client_end, cfg.client(trial));
    } catch (...) {
      client_end->close();
      server.join();
      if (server_error) std::rethrow_exception(server_error);
      throw;
    }
    server.join();
    if (server_error) std::rethrow_exception(server_error);
    if (client.logits.values != reference_forward(model, input).values) ++report.mismatches;
    per_trial.push_back(std::move(server_stats.layers));
  }

  const std::size_t rows = per_trial.front().size();
  for (std::size_t r = 0; r < rows; ++r) {
    LayerStats out;
    out.name = per_trial.front()[r].name;
    auto field = [&](auto getter) {
      std::vector<std::uint64_t> v;
      for (const auto& t : per_trial) v.push_back(getter(t[r]));
      return median(v);
    };
    out.ops.hmul_plain = field([](const LayerStats& s) { return s.ops.hmul_plain; });
    out.ops.bias_hmul_plain = field([](const LayerStats& s) { return s.ops.bias_hmul_plain; });
    out.ops.hadd = field([](const LayerStats& s) { return s.ops.hadd; });
    out.ops.comparisons = field([](const LayerStats& s) { return s.ops.comparisons; });
    out.ops.dummy_slots = field([](const LayerStats& s) { return s.ops.dummy_slots; });
    out.ops.pair_diff_muladds = field([](const LayerStats& s) { return s.ops.pair_diff_muladds; });
    out.ops.ciphertexts_sent = field([](const LayerStats& s) { return s.ops.ciphertexts_sent; });
    out.ops.ciphertexts_received =
        field([](const LayerStats& s) { return s.ops.ciphertexts_received; });
    out.ops.rounds = field([](const LayerStats& s) { return s.ops.rounds; });
    out.bytes_sent = field([](const LayerStats& s) { return s.bytes_sent; });
    out.bytes_received = field([](const LayerStats& s) { return s.bytes_received; });
    std::vector<double> walls;
    for (const auto& t : per_trial) walls.push_back(t[r].wall_ms);
    out.wall_ms = median(walls);
    report.rows.push_back(std::move(out));
  }
  return report;
}

}  // namespace popcorn
