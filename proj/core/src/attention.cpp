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

#include "strm/attention.hpp"

#include <cmath>

#include "strm/ops.hpp"

namespace strm {

template <typename T>
KeyValue<T> project_kv(const Graph<T>& g, const Var<T>& x, KvProjector<T>& params, KvRole role) {
  if (x.value().rank() != 3 || x.shape()[0] != params.key.in_channels()) {
    throw DimensionError("project_kv: expected " + std::to_string(params.key.in_channels()) +
                         " channels on axis 0, got " + shape_string(x.shape()));
  }
  return {params.key(g, x), params.value(g, x), role};
}

template <typename T>
MemoryKeyValue<T> concat_memory_kv(const std::vector<KeyValue<T>>& slots) {
  if (slots.empty()) throw StateError("concat_memory_kv: memory has no slots");
  const Shape ks = slots.front().key.shape();
  const Shape vs = slots.front().value.shape();
  if (ks.size() != 3 || vs.size() != 3 || ks[1] != vs[1] || ks[2] != vs[2]) {
    throw DimensionError("concat_memory_kv: key " + shape_string(ks) + " and value " +
                         shape_string(vs) + " must share spatial dims");
  }
  const std::size_t pixels = ks[1] * ks[2];
  std::vector<Var<T>> keys, values;
  for (const auto& kv : slots) {
    if (kv.key.shape() != ks || kv.value.shape() != vs) {
      throw DimensionError("concat_memory_kv: heterogeneous slot shapes " +
                           shape_string(kv.key.shape()) + " vs " + shape_string(ks));
    }
    keys.push_back(ops::transpose(ops::reshape(kv.key, {ks[0], pixels})));
    values.push_back(ops::transpose(ops::reshape(kv.value, {vs[0], pixels})));
  }
  MemoryKeyValue<T> out;
  out.key = keys.size() == 1 ? keys.front() : ops::concat(keys);
  out.value = values.size() == 1 ? values.front() : ops::concat(values);
  out.slots = slots.size();
  out.pixels = pixels;
  return out;
}

template <typename T>
ReadOut<T> memory_read(const KeyValue<T>& query, const MemoryKeyValue<T>& memory,
                       const ReadOptions& opts) {
  const Shape& qs = query.key.shape();
  const Shape& qv = query.value.shape();
  if (qs.size() != 3 || qv.size() != 3 || qs[1] != qv[1] || qs[2] != qv[2]) {
    throw DimensionError("memory_read: query key/value must be C x H x W with equal spatial dims");
  }
  if (memory.positions() == 0) throw DimensionError("memory_read: memory has no positions");
  const std::size_t dk = qs[0], dv = qv[0], hw = qs[1] * qs[2];
  if (memory.key.shape()[1] != dk) {
    throw DimensionError("memory_read: query D_k=" + std::to_string(dk) + " but memory D_k=" +
                         std::to_string(memory.key.shape()[1]));
  }
  if (memory.value.shape()[1] != dv) {
    throw DimensionError("memory_read: query D_v=" + std::to_string(dv) + " but memory D_v=" +
                         std::to_string(memory.value.shape()[1]));
  }
  Var<T> qk = ops::transpose(ops::reshape(query.key, {dk, hw}));  // HW x D_k
  Var<T> logits = ops::matmul(qk, ops::transpose(memory.key));    // HW x positions
  if (opts.scale_logits) logits = ops::scale(logits, T(1) / std::sqrt(T(dk)));
  ReadOut<T> out;
  out.weights = ops::softmax(logits);
  Var<T> retrieved = ops::matmul(out.weights, memory.value);  // HW x D_v
  Var<T> retrieved_map = ops::reshape(ops::transpose(retrieved), {dv, qs[1], qs[2]});
  out.features = ops::concat<T>({retrieved_map, query.value});
  return out;
}

#define STRM_INSTANTIATE_ATTENTION(T)                                                       \
  template KeyValue<T> project_kv(const Graph<T>&, const Var<T>&, KvProjector<T>&, KvRole);  \
  template MemoryKeyValue<T> concat_memory_kv(const std::vector<KeyValue<T>>&);             \
  template ReadOut<T> memory_read(const KeyValue<T>&, const MemoryKeyValue<T>&, const ReadOptions&);

STRM_INSTANTIATE_ATTENTION(float)
STRM_INSTANTIATE_ATTENTION(double)

#undef STRM_INSTANTIATE_ATTENTION

}  // namespace strm
