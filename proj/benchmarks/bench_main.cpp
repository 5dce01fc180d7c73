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

#include <benchmark/benchmark.h>

#include "strm/attention.hpp"
#include "strm/memory.hpp"
#include "strm/models.hpp"
#include "strm/ops.hpp"
#include "strm/random.hpp"

namespace {

using strm::Tensor;
using strm::Var;

Tensor<float> random_tensor(strm::Rng& rng, strm::Shape shape) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data()) v = float(rng.uniform(-1, 1));
  return t;
}

void BM_Conv3x3(benchmark::State& state) {
  const auto c = std::size_t(state.range(0));
  strm::Rng rng(0);
  const auto x = strm::constant(random_tensor(rng, {c, 32, 32}));
  const auto k = strm::constant(random_tensor(rng, {c, c, 3, 3}));
  const auto b = strm::constant(random_tensor(rng, {c}));
  for (auto _ : state) benchmark::DoNotOptimize(strm::ops::conv2d(x, k, b, 1, 1));
}
BENCHMARK(BM_Conv3x3)->Arg(8)->Arg(32);

void BM_Similarity(benchmark::State& state) {
  strm::Rng rng(1);
  const auto a = strm::constant(random_tensor(rng, {8, 8, 8}));
  const auto b = strm::constant(random_tensor(rng, {8, 8, 8}));
  for (auto _ : state) benchmark::DoNotOptimize(strm::similarity(a, b));
}
BENCHMARK(BM_Similarity);

// Read cost against the number of stored templates.
void BM_MemoryRead(benchmark::State& state) {
  const auto slots = std::size_t(state.range(0));
  strm::Rng rng(2);
  strm::KvProjector<float> proj(32, 4, 16, rng);
  strm::Graph<float> g;
  const auto q = strm::project_kv(g, strm::constant(random_tensor(rng, {32, 8, 8})), proj, strm::KvRole::kQuery);
  std::vector<strm::KeyValue<float>> kvs;
  for (std::size_t i = 0; i < slots; ++i)
    kvs.push_back(strm::project_kv(g, strm::constant(random_tensor(rng, {32, 8, 8})), proj, strm::KvRole::kMemory));
  const auto mem = strm::concat_memory_kv(kvs);
  for (auto _ : state) benchmark::DoNotOptimize(strm::memory_read(q, mem));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_MemoryRead)->RangeMultiplier(2)->Range(2, 64)->Complexity(benchmark::oN);

void BM_LearnedUpdate(benchmark::State& state) {
  strm::Rng rng(3);
  strm::UpdateKeyProjector<float> proj(32, 8, rng);
  strm::Graph<float> g;
  strm::MemoryBank<float> bank(6, strm::Policy::kLearned);
  strm::GumbelNoise noise(0);
  strm::UpdateOptions opts;
  std::size_t t = 0;
  for (; t < 6; ++t) strm::update_memory(g, bank, strm::constant(random_tensor(rng, {32, 8, 8})), t, proj, noise, opts);
  const auto x = strm::constant(random_tensor(rng, {32, 8, 8}));
  for (auto _ : state) benchmark::DoNotOptimize(strm::update_memory(g, bank, x, t++, proj, noise, opts));
}
BENCHMARK(BM_LearnedUpdate);

void BM_VosStep(benchmark::State& state) {
  strm::Rng rng(4);
  strm::Model<float> model(strm::ModelConfig::vos_defaults(), 0);
  strm::ModelState<float> st(model.config(), 0, strm::UpdateMode::kEval);
  strm::Graph<float> g;
  Tensor<float> mask({1, 64, 64});
  for (std::size_t y = 20; y < 40; ++y)
    for (std::size_t x = 20; x < 40; ++x) mask.at(0, y, x) = 1;
  strm::vos_init(model, st, g, strm::constant(random_tensor(rng, {3, 64, 64})), strm::constant(mask));
  const auto frame = strm::constant(random_tensor(rng, {3, 64, 64}));
  std::size_t t = 1;
  for (auto _ : state) benchmark::DoNotOptimize(strm::vos_step(model, st, g, frame, t++));
}
BENCHMARK(BM_VosStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
