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

#ifndef STRM_ATTENTION_HPP_
#define STRM_ATTENTION_HPP_

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "strm/autodiff.hpp"
#include "strm/layers.hpp"

namespace strm {

enum class KvRole { kQuery, kMemory };

// key: D_k x H x W, value: D_v x H x W.
template <typename T>
struct KeyValue {
  Var<T> key;
  Var<T> value;
  KvRole role = KvRole::kQuery;
};

// Memory side after concatenation: one row per memory position, ordered by
// slot, then row-major pixel.
template <typename T>
struct MemoryKeyValue {
  Var<T> key;    // positions x D_k
  Var<T> value;  // positions x D_v
  std::size_t slots = 0;
  std::size_t pixels = 0;  // H * W per slot

  std::size_t positions() const { return slots * pixels; }
  std::size_t position(std::size_t slot, std::size_t pixel) const { return slot * pixels + pixel; }
  std::pair<std::size_t, std::size_t> locate(std::size_t position) const {
    return {position / pixels, position % pixels};
  }
};

template <typename T>
struct KvProjector {
  Conv2d<T> key;
  Conv2d<T> value;

  KvProjector() = default;
  KvProjector(std::size_t channels, std::size_t key_channels, std::size_t value_channels, Rng& rng)
      : key(channels, key_channels, 3, 1, rng), value(channels, value_channels, 3, 1, rng) {}

  std::size_t key_channels() const { return key.out_channels(); }
  std::size_t value_channels() const { return value.out_channels(); }

  void collect(ParameterSet<T>& set, const std::string& prefix) {
    key.collect(set, prefix + ".key");
    value.collect(set, prefix + ".value");
  }
};

template <typename T>
struct ReadOut {
  Var<T> features;  // 2 D_v x H x W: [retrieved memory value, query value]
  Var<T> weights;   // HW x positions attention matrix
};

struct ReadOptions {
  // Divide logits by sqrt(D_k). Off: raw dot products.
  bool scale_logits = false;
};

template <typename T>
KeyValue<T> project_kv(const Graph<T>& g, const Var<T>& x, KvProjector<T>& params, KvRole role);

template <typename T>
MemoryKeyValue<T> concat_memory_kv(const std::vector<KeyValue<T>>& slots);

template <typename T>
ReadOut<T> memory_read(const KeyValue<T>& query, const MemoryKeyValue<T>& memory,
                       const ReadOptions& opts = {});

}  // namespace strm

#endif  // STRM_ATTENTION_HPP_
