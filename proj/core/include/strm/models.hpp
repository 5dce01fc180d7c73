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

#ifndef STRM_MODELS_HPP_
#define STRM_MODELS_HPP_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "strm/attention.hpp"
#include "strm/autodiff.hpp"
#include "strm/layers.hpp"
#include "strm/memory.hpp"

namespace strm {

enum class Task { kVos, kPrediction };
enum class Head { kSegmentation, kFrame };

Task parse_task(const std::string& name);
std::string task_name(Task t);

struct ModelConfig {
  Task task = Task::kVos;
  std::size_t base_width = 32;      // encoder output channels C
  std::size_t encoder_blocks = 3;
  std::size_t decoder_blocks = 3;
  std::size_t downsample = 8;       // s, a power of two
  std::size_t key_channels = 0;     // D_k; 0 selects C/8
  std::size_t value_channels = 0;   // D_v; 0 selects C/2
  std::size_t update_key_channels = 0;  // D_u; 0 selects C/2
  std::size_t k_slots = 6;
  Policy policy = Policy::kLearned;
  double tau = 1.0;
  bool fusion = false;
  bool scale_logits = false;
  bool score_query_feature = false;  // score the query map instead of the memory map
  std::size_t clip_frames = 3;       // prediction input stack

  std::size_t dk() const { return key_channels ? key_channels : std::max<std::size_t>(1, base_width / 8); }
  std::size_t dv() const { return value_channels ? value_channels : std::max<std::size_t>(1, base_width / 2); }
  std::size_t du() const {
    return update_key_channels ? update_key_channels : std::max<std::size_t>(1, base_width / 2);
  }
  std::size_t query_input_channels() const { return task == Task::kVos ? 3 : 3 * clip_frames; }
  void validate() const;

  static ModelConfig vos_defaults();
  static ModelConfig prediction_defaults();
};

// Stack of blocks: conv3x3 (stride 2 while downsampling) -> GN -> leaky ReLU
// -> conv3x3 -> GN -> leaky ReLU.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(std::size_t in_channels, std::size_t out_channels, std::size_t blocks,
          std::size_t downsample, Rng& rng);

  Var<T> forward(const Graph<T>& g, const Var<T>& x);
  void collect(ParameterSet<T>& set, const std::string& prefix);

  std::size_t in_channels() const { return in_channels_; }
  std::size_t out_channels() const { return out_channels_; }
  std::size_t downsample() const { return downsample_; }

 private:
  struct Block {
    Conv2d<T> conv1, conv2;
    GroupNorm<T> norm1, norm2;
  };
  std::vector<Block> blocks_;
  std::size_t in_channels_ = 0, out_channels_ = 0, downsample_ = 1;
};

// U-Net-style upsampling path with no encoder skip connections: plain blocks,
// then bilinear x2 + conv blocks up to input resolution, then the head.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(std::size_t in_channels, Head head, std::size_t blocks, std::size_t upsample, Rng& rng);

  Var<T> forward(const Graph<T>& g, const Var<T>& x);
  void collect(ParameterSet<T>& set, const std::string& prefix);
  std::size_t in_channels() const { return in_channels_; }
  Head head() const { return head_; }

 private:
  struct Block {
    bool upsample = false;
    Conv2d<T> conv1, conv2;
    GroupNorm<T> norm1, norm2;
  };
  std::vector<Block> blocks_;
  Conv2d<T> out_;
  Head head_ = Head::kSegmentation;
  std::size_t in_channels_ = 0;
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }
  ParameterSet<T>& parameters() noexcept { return params_; }

  Var<T> encode_query(const Graph<T>& g, const Var<T>& frame);
  // Frame 3 x H x W and soft mask 1 x H x W in [0, 1].
  Var<T> encode_memory_vos(const Graph<T>& g, const Var<T>& frame, const Var<T>& mask);
  // Exactly clip_frames images, oldest first, channel-stacked through the
  // shared encoder.
  Var<T> encode_clip(const Graph<T>& g, const std::vector<Var<T>>& frames);
  // Segmentation: logits 2 x H x W. Frame: image 3 x H x W in [0, 1].
  Var<T> decode(const Graph<T>& g, const ReadOut<T>& readout);

  KeyValue<T> query_kv(const Graph<T>& g, const Var<T>& x) {
    return project_kv(g, x, query_kv_, KvRole::kQuery);
  }
  KeyValue<T> memory_kv(const Graph<T>& g, const Var<T>& x) {
    return project_kv(g, x, memory_kv_, KvRole::kMemory);
  }

  Encoder<T>& query_encoder() { return query_encoder_; }
  Encoder<T>& memory_encoder() { return cfg_.task == Task::kVos ? memory_encoder_ : query_encoder_; }
  Decoder<T>& decoder() { return decoder_; }
  UpdateKeyProjector<T>& update_projector() { return update_proj_; }
  FusionModule<T>& fusion() { return fusion_; }
  KvProjector<T>& query_projector() { return query_kv_; }
  KvProjector<T>& memory_projector() { return memory_kv_; }

 private:
  void check_image(const Var<T>& x, std::size_t channels, const char* what) const;

  ModelConfig cfg_;
  Encoder<T> query_encoder_;
  Encoder<T> memory_encoder_;  // VOS only
  KvProjector<T> query_kv_;
  KvProjector<T> memory_kv_;
  UpdateKeyProjector<T> update_proj_;
  FusionModule<T> fusion_;
  Decoder<T> decoder_;
  ParameterSet<T> params_;
};

// Recurrent state owned by one sequence.
template <typename T>
struct ModelState {
  ModelState(const ModelConfig& cfg, std::uint64_t seed, UpdateMode mode);

  MemoryBank<T> bank;
  GumbelNoise noise;
  Rng policy_rng;
  UpdateMode mode;
  Var<T> last_prediction;
  Var<T> last_query;  // query feature of the most recent frame
  std::size_t steps = 0;
  // Memory-side key/value per stored template, keyed by the template node.
  std::vector<std::pair<std::shared_ptr<Node<T>>, KeyValue<T>>> kv_cache;
  std::optional<UpdateDecision<T>> last_decision;

  bool initialized() const { return !bank.empty(); }
};

template <typename T>
struct VosStep {
  Var<T> logits;      // 2 x H x W
  Var<T> foreground;  // 1 x H x W probability
  ReadOut<T> readout;
};

// Reads memory with the current frame and decodes a mask. Leaves the bank
// untouched.
template <typename T>
VosStep<T> vos_predict(Model<T>& model, ModelState<T>& state, const Graph<T>& g, const Var<T>& frame);

// Encodes (frame, mask) with the memory encoder and writes it into memory.
template <typename T>
void vos_commit(Model<T>& model, ModelState<T>& state, const Graph<T>& g, const Var<T>& frame,
                const Var<T>& mask, std::size_t frame_index);

// Pins the first frame with its ground-truth mask.
template <typename T>
void vos_init(Model<T>& model, ModelState<T>& state, const Graph<T>& g, const Var<T>& frame,
              const Var<T>& mask);

// Read, decode, then feed the predicted mask back into memory.
template <typename T>
VosStep<T> vos_step(Model<T>& model, ModelState<T>& state, const Graph<T>& g, const Var<T>& frame,
                    std::size_t frame_index);

// Predicts frame `target_index` from the clip of the preceding frames, then
// writes the clip encoding into memory. The first call seeds the pinned slot.
template <typename T>
Var<T> prediction_step(Model<T>& model, ModelState<T>& state, const Graph<T>& g,
                       const std::vector<Var<T>>& clip, std::size_t target_index);

// Memory read over every slot, using the per-template key/value cache.
template <typename T>
ReadOut<T> read_memory(Model<T>& model, ModelState<T>& state, const Graph<T>& g,
                       const Var<T>& query_feature);

}  // namespace strm

#endif  // STRM_MODELS_HPP_
