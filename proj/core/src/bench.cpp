// Copyright 2026 The STRM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <chrono>

#include "json.hpp"
#include "strm/attention.hpp"
#include "strm/errors.hpp"
#include "strm/harness.hpp"
#include "strm/memory.hpp"

namespace strm {

namespace {

using Clock = std::chrono::steady_clock;
using F = float;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Fixture {
  KvProjector<F> query_proj, memory_proj;
  UpdateKeyProjector<F> update_proj;
  std::vector<Var<F>> pool;  // synthetic feature maps, cycled through

  Fixture(const BenchConfig& cfg) {
    Rng rng(Rng::mix(cfg.seed, 7));
    query_proj = KvProjector<F>(cfg.channels, cfg.key_channels, cfg.value_channels, rng);
    memory_proj = KvProjector<F>(cfg.channels, cfg.key_channels, cfg.value_channels, rng);
    update_proj = UpdateKeyProjector<F>(cfg.channels, cfg.channels / 2, rng);
    for (int i = 0; i < 16; ++i) {
      Tensor<F> t({cfg.channels, cfg.height, cfg.width});
      for (auto& v : t.data()) v = F(rng.normal());
      pool.push_back(constant(std::move(t)));
    }
  }
  const Var<F>& feature(std::size_t t) const { return pool[t % pool.size()]; }
};

struct RunStats {
  double read = 0, update = 0;
  std::size_t peak_slots = 0;
};

// One pass over a T-frame sequence. Frame 0 initialises memory; every later
// frame reads, then writes. Read latency is the median over the trailing
// `measured_steps` frames.
RunStats run_once(const BenchConfig& cfg, Fixture& fx, std::size_t length, bool linear, std::uint64_t seed) {
  const Graph<F> g;
  const std::size_t capacity = linear ? length + 1 : cfg.k_slots;
  MemoryBank<F> bank(capacity, linear ? Policy::kOldest : Policy::kLearned);
  GumbelNoise noise(seed, true);
  // Holding the node keeps its address from being reused while cached.
  std::vector<std::pair<std::shared_ptr<Node<F>>, KeyValue<F>>> cache;
  auto memory_kv = [&]() {
    std::vector<KeyValue<F>> kvs;
    for (const auto& s : bank.slots()) {
      auto it = std::find_if(cache.begin(), cache.end(), [&](const auto& e) { return e.first.get() == s.tmpl.node(); });
      if (it == cache.end()) {
        cache.emplace_back(s.tmpl.shared(), project_kv(g, s.tmpl, fx.memory_proj, KvRole::kMemory));
        it = cache.end() - 1;
      }
      kvs.push_back(it->second);
    }
    // Drop entries of evicted templates.
    std::erase_if(cache, [&](const auto& e) {
      return std::none_of(bank.slots().begin(), bank.slots().end(), [&](const auto& s) { return s.tmpl.node() == e.first.get(); });
    });
    return kvs;
  };

  bank.append(fx.feature(0), 0);
  memory_kv();
  std::vector<double> reads, updates;
  const std::size_t first_measured = length > cfg.measured_steps ? length - cfg.measured_steps : 1;
  for (std::size_t t = 1; t < length; ++t) {
    const Var<F>& x = fx.feature(t);
    const KeyValue<F> q = project_kv(g, x, fx.query_proj, KvRole::kQuery);
    auto t0 = Clock::now();
    const MemoryKeyValue<F> mem = concat_memory_kv(memory_kv());
    const ReadOut<F> out = memory_read(q, mem);
    const double read = seconds_since(t0);
    if (out.features.size() == 0) throw StateError("empty read");

    t0 = Clock::now();
    if (linear) {
      if (t % cfg.gamma == 0) bank.append(x, t);
    } else {
      update_memory(g, bank, x, t, fx.update_proj, noise, UpdateOptions{1.0, UpdateMode::kEval});
    }
    memory_kv();
    const double update = seconds_since(t0);
    if (t >= first_measured) {
      reads.push_back(read);
      updates.push_back(update);
    }
  }
  RunStats s;
  s.read = median(reads);
  s.update = median(updates);
  s.peak_slots = bank.peak_size();
  return s;
}

}  // namespace

const BenchPoint& BenchResult::at(const std::string& variant, std::size_t length) const {
  for (const auto& p : points)
    if (p.variant == variant && p.length == length) return p;
  throw ContractError("no benchmark point for " + variant + " at T=" + std::to_string(length));
}

BenchResult bench_complexity(const BenchConfig& cfg, const std::vector<std::size_t>& lengths) {
  if (lengths.empty()) throw ConfigError("bench needs at least one sequence length");
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] < 2) throw ConfigError("bench sequence lengths must be >= 2");
    if (i && lengths[i] <= lengths[i - 1]) throw ConfigError("bench sequence lengths must be strictly increasing");
  }
  if (cfg.k_slots < 3) throw ConfigError("bench uses the learned update, which needs K >= 3");
  if (cfg.gamma == 0) throw ConfigError("linear-growth interval gamma must be >= 1");
  if (cfg.repetitions == 0 || cfg.measured_steps == 0) throw ConfigError("bench needs repetitions and measured steps");

  Fixture fx(cfg);
  BenchResult result;
  result.config = cfg;
  const std::size_t template_bytes = cfg.channels * cfg.height * cfg.width * sizeof(F);
  // Lengths are interleaved within each repetition, after an untimed warm-up
  // pass, so cache and clock drift affect every length alike.
  for (const bool linear : {false, true}) {
    run_once(cfg, fx, lengths.front(), linear, Rng::mix(cfg.seed, ~0ULL));
    const std::size_t n = lengths.size();
    std::vector<std::vector<double>> reads(n), updates(n);
    std::vector<std::size_t> peak(n, 0);
    for (std::size_t r = 0; r < cfg.repetitions; ++r) {
      for (std::size_t i = 0; i < n; ++i) {
        const RunStats s = run_once(cfg, fx, lengths[i], linear, Rng::mix(cfg.seed, r));
        reads[i].push_back(s.read);
        updates[i].push_back(s.update);
        peak[i] = std::max(peak[i], s.peak_slots);
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!linear && peak[i] != std::min(lengths[i], cfg.k_slots))
        throw StateError("fixed-capacity memory stored " + std::to_string(peak[i]) + " templates with K=" +
                         std::to_string(cfg.k_slots));
      BenchPoint p;
      p.variant = linear ? "linear" : "stremn";
      p.length = lengths[i];
      p.read_latency = median(reads[i]);
      p.update_latency = median(updates[i]);
      p.peak_slots = peak[i];
      p.peak_bytes = peak[i] * template_bytes;
      result.points.push_back(p);
    }
  }
  return result;
}

std::string bench_to_json(const BenchResult& r) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["config"] = {{"k_slots", r.config.k_slots},
                 {"gamma", r.config.gamma},
                 {"channels", r.config.channels},
                 {"height", r.config.height},
                 {"width", r.config.width},
                 {"key_channels", r.config.key_channels},
                 {"value_channels", r.config.value_channels},
                 {"repetitions", r.config.repetitions},
                 {"measured_steps", r.config.measured_steps},
                 {"seed", r.config.seed}};
  j["points"] = nlohmann::json::array();
  for (const auto& p : r.points)
    j["points"].push_back({{"variant", p.variant},
                           {"T", p.length},
                           {"read_latency_s", p.read_latency},
                           {"update_latency_s", p.update_latency},
                           {"peak_slots", p.peak_slots},
                           {"peak_template_bytes", p.peak_bytes}});
  return j.dump(2);
}

}  // namespace strm
