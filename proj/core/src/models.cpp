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

#include "strm/models.hpp"

#include <algorithm>
#include <bit>

#include "strm/ops.hpp"

namespace strm {
namespace {

std::size_t log2_exact(std::size_t v, const char* what) {
  if (v == 0 || !std::has_single_bit(v)) {
    throw ConfigError(std::string(what) + " must be a power of two, got " + std::to_string(v));
  }
  return static_cast<std::size_t>(std::countr_zero(v));
}

}  // namespace

Task parse_task(const std::string& name) {
  if (name == "vos") return Task::kVos;
  if (name == "pred" || name == "prediction") return Task::kPrediction;
  throw ConfigError("unknown task '" + name + "' (expected vos or pred)");
}

std::string task_name(Task t) { return t == Task::kVos ? "vos" : "pred"; }

void ModelConfig::validate() const {
  const std::size_t levels = log2_exact(downsample, "downsample factor");
  if (encoder_blocks < levels) {
    throw ConfigError("encoder needs at least log2(s)=" + std::to_string(levels) + " blocks");
  }
  if (decoder_blocks < levels) {
    throw ConfigError("decoder needs at least log2(s)=" + std::to_string(levels) + " blocks");
  }
  if (base_width == 0) throw ConfigError("base width must be positive");
  if (k_slots == 0) throw ConfigError("memory needs at least one slot");
  if (policy == Policy::kLearned && k_slots < 3) {
    throw ConfigError("learned policy needs K >= 3, got K=" + std::to_string(k_slots));
  }
  if (!(tau > 0)) throw ConfigError("gumbel.tau must be positive");
  if (task == Task::kPrediction && clip_frames == 0) throw ConfigError("clip must hold frames");
}

ModelConfig ModelConfig::vos_defaults() { return ModelConfig{}; }

ModelConfig ModelConfig::prediction_defaults() {
  ModelConfig c;
  c.task = Task::kPrediction;
  c.base_width = 16;
  c.encoder_blocks = 6;
  c.decoder_blocks = 6;
  c.downsample = 8;
  c.k_slots = 5;
  return c;
}

template <typename T>
Encoder<T>::Encoder(std::size_t in_channels, std::size_t out_channels, std::size_t blocks,
                    std::size_t downsample, Rng& rng)
    : in_channels_(in_channels), out_channels_(out_channels), downsample_(downsample) {
  const std::size_t levels = log2_exact(downsample, "encoder downsample factor");
  if (blocks < levels) throw ConfigError("encoder has fewer blocks than downsampling levels");
  std::size_t prev = in_channels;
  for (std::size_t b = 0; b < blocks; ++b) {
    const bool down = b < levels;
    const std::size_t width =
        down ? std::max<std::size_t>(std::min<std::size_t>(8, out_channels),
                                     out_channels >> (levels - 1 - b))
             : out_channels;
    Block blk;
    blk.conv1 = Conv2d<T>(prev, width, 3, down ? 2 : 1, rng);
    blk.norm1 = GroupNorm<T>(width, default_groups(width));
    blk.conv2 = Conv2d<T>(width, width, 3, 1, rng);
    blk.norm2 = GroupNorm<T>(width, default_groups(width));
    blocks_.push_back(std::move(blk));
    prev = width;
  }
}

template <typename T>
Var<T> Encoder<T>::forward(const Graph<T>& g, const Var<T>& x) {
  Var<T> h = x;
  for (auto& b : blocks_) {
    h = ops::leaky_relu(b.norm1(g, b.conv1(g, h)));
    h = ops::leaky_relu(b.norm2(g, b.conv2(g, h)));
  }
  return h;
}

template <typename T>
void Encoder<T>::collect(ParameterSet<T>& set, const std::string& prefix) {
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = prefix + ".block" + std::to_string(b);
    blocks_[b].conv1.collect(set, p + ".conv1");
    blocks_[b].norm1.collect(set, p + ".norm1");
    blocks_[b].conv2.collect(set, p + ".conv2");
    blocks_[b].norm2.collect(set, p + ".norm2");
  }
}

template <typename T>
Decoder<T>::Decoder(std::size_t in_channels, Head head, std::size_t blocks, std::size_t upsample,
                    Rng& rng)
    : head_(head), in_channels_(in_channels) {
  const std::size_t levels = log2_exact(upsample, "decoder upsample factor");
  if (blocks < levels) throw ConfigError("decoder has fewer blocks than upsampling levels");
  std::size_t prev = in_channels;
  const std::size_t plain = blocks - levels;
  for (std::size_t b = 0; b < blocks; ++b) {
    const bool up = b >= plain;
    const std::size_t level = up ? b - plain + 1 : 0;
    const std::size_t width = std::max<std::size_t>(8, in_channels >> level);
    Block blk;
    blk.upsample = up;
    blk.conv1 = Conv2d<T>(prev, width, 3, 1, rng);
    blk.norm1 = GroupNorm<T>(width, default_groups(width));
    blk.conv2 = Conv2d<T>(width, width, 3, 1, rng);
    blk.norm2 = GroupNorm<T>(width, default_groups(width));
    blocks_.push_back(std::move(blk));
    prev = width;
  }
  out_ = Conv2d<T>(prev, head == Head::kSegmentation ? 2 : 3, 3, 1, rng);
}

template <typename T>
Var<T> Decoder<T>::forward(const Graph<T>& g, const Var<T>& x) {
  if (x.value().rank() != 3 || x.shape()[0] != in_channels_) {
    throw DimensionError("decoder expects " + std::to_string(in_channels_) +
                         " readout channels, got " + shape_string(x.shape()));
  }
  Var<T> h = x;
  for (auto& b : blocks_) {
    if (b.upsample) h = ops::upsample2x(h);
    h = ops::leaky_relu(b.norm1(g, b.conv1(g, h)));
    h = ops::leaky_relu(b.norm2(g, b.conv2(g, h)));
  }
  h = out_(g, h);
  return head_ == Head::kFrame ? ops::sigmoid(h) : h;
}

template <typename T>
void Decoder<T>::collect(ParameterSet<T>& set, const std::string& prefix) {
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = prefix + ".block" + std::to_string(b);
    blocks_[b].conv1.collect(set, p + ".conv1");
    blocks_[b].norm1.collect(set, p + ".norm1");
    blocks_[b].conv2.collect(set, p + ".conv2");
    blocks_[b].norm2.collect(set, p + ".norm2");
  }
  out_.collect(set, prefix + ".head");
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(Rng::mix(seed, 0x6d6f64656cULL));
  const std::size_t c = cfg_.base_width;
  query_encoder_ = Encoder<T>(cfg_.query_input_channels(), c, cfg_.encoder_blocks, cfg_.downsample, rng);
  if (cfg_.task == Task::kVos) {
    memory_encoder_ = Encoder<T>(4, c, cfg_.encoder_blocks, cfg_.downsample, rng);
  }
  query_kv_ = KvProjector<T>(c, cfg_.dk(), cfg_.dv(), rng);
  memory_kv_ = KvProjector<T>(c, cfg_.dk(), cfg_.dv(), rng);
  update_proj_ = UpdateKeyProjector<T>(c, cfg_.du(), rng);
  if (cfg_.fusion) fusion_ = FusionModule<T>(c, rng);
  decoder_ = Decoder<T>(2 * cfg_.dv(), cfg_.task == Task::kVos ? Head::kSegmentation : Head::kFrame,
                        cfg_.decoder_blocks, cfg_.downsample, rng);

  query_encoder_.collect(params_, "query_encoder");
  if (cfg_.task == Task::kVos) memory_encoder_.collect(params_, "memory_encoder");
  query_kv_.collect(params_, "query_kv");
  memory_kv_.collect(params_, "memory_kv");
  update_proj_.collect(params_, "update_keys");
  if (cfg_.fusion) fusion_.collect(params_, "fusion");
  decoder_.collect(params_, "decoder");
}

template <typename T>
void Model<T>::check_image(const Var<T>& x, std::size_t channels, const char* what) const {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[0] != channels) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(channels) +
                         " x H x W input, got " + shape_string(s));
  }
  if (s[1] % cfg_.downsample != 0 || s[2] % cfg_.downsample != 0) {
    throw ConfigError(std::string(what) + ": image " + shape_string(s) +
                      " not divisible by downsample factor " + std::to_string(cfg_.downsample));
  }
}

template <typename T>
Var<T> Model<T>::encode_query(const Graph<T>& g, const Var<T>& frame) {
  check_image(frame, cfg_.query_input_channels(), "encode_query");
  return query_encoder_.forward(g, frame);
}

template <typename T>
Var<T> Model<T>::encode_memory_vos(const Graph<T>& g, const Var<T>& frame, const Var<T>& mask) {
  if (cfg_.task != Task::kVos) throw UnsupportedError("encode_memory_vos on a prediction model");
  check_image(frame, 3, "encode_memory_vos");
  const Shape& ms = mask.shape();
  if (ms.size() != 3 || ms[0] != 1 || ms[1] != frame.shape()[1] || ms[2] != frame.shape()[2]) {
    throw DimensionError("encode_memory_vos: mask " + shape_string(ms) +
                         " must be 1 x H x W matching frame " + shape_string(frame.shape()));
  }
  return memory_encoder_.forward(g, ops::concat<T>({frame, mask}));
}

template <typename T>
Var<T> Model<T>::encode_clip(const Graph<T>& g, const std::vector<Var<T>>& frames) {
  if (frames.size() != cfg_.clip_frames) {
    throw ContractError("encode_clip: expected " + std::to_string(cfg_.clip_frames) +
                        " frames, got " + std::to_string(frames.size()));
  }
  for (const auto& f : frames) {
    if (f.shape() != frames.front().shape() || f.value().rank() != 3 || f.shape()[0] != 3) {
      throw DimensionError("encode_clip: frames must all be 3 x H x W with equal dims");
    }
  }
  Var<T> stacked = ops::concat(frames);
  check_image(stacked, 3 * cfg_.clip_frames, "encode_clip");
  return query_encoder_.forward(g, stacked);
}

template <typename T>
Var<T> Model<T>::decode(const Graph<T>& g, const ReadOut<T>& readout) {
  return decoder_.forward(g, readout.features);
}

template <typename T>
ModelState<T>::ModelState(const ModelConfig& cfg, std::uint64_t seed, UpdateMode mode_)
    : bank(cfg.k_slots, cfg.policy),
      noise(Rng::mix(seed, 0x67756d62656cULL), mode_ == UpdateMode::kEval),
      policy_rng(Rng::mix(seed, 0x706f6c696379ULL)),
      mode(mode_) {}

template <typename T>
ReadOut<T> read_memory(Model<T>& model, ModelState<T>& state, const Graph<T>& g,
                       const Var<T>& query_feature) {
  if (!state.initialized()) throw StateError("model state used before initialization");
  std::vector<std::pair<std::shared_ptr<Node<T>>, KeyValue<T>>> cache;
  std::vector<KeyValue<T>> kvs;
  for (const auto& slot : state.bank.slots()) {
    const auto& node = slot.tmpl.shared();
    auto hit = std::find_if(state.kv_cache.begin(), state.kv_cache.end(),
                            [&node](const auto& e) { return e.first == node; });
    KeyValue<T> kv = hit != state.kv_cache.end() ? hit->second : model.memory_kv(g, slot.tmpl);
    cache.emplace_back(node, kv);
    kvs.push_back(kv);
  }
  state.kv_cache = std::move(cache);
  ReadOptions opts;
  opts.scale_logits = model.config().scale_logits;
  return memory_read(model.query_kv(g, query_feature), concat_memory_kv(kvs), opts);
}

namespace {

template <typename T>
void write_memory(Model<T>& model, ModelState<T>& state, const Graph<T>& g, const Var<T>& x,
                  std::size_t frame_index) {
  const ModelConfig& cfg = model.config();
  if (cfg.policy == Policy::kLearned) {
    UpdateOptions opts;
    opts.tau = cfg.tau;
    opts.mode = state.mode;
    const Var<T>* scoring =
        cfg.score_query_feature && state.last_query.valid() ? &state.last_query : nullptr;
    state.last_decision = update_memory(g, state.bank, x, frame_index, model.update_projector(),
                                        state.noise, opts, scoring,
                                        cfg.fusion ? &model.fusion() : nullptr);
  } else {
    baseline_policy_update(state.bank, x, frame_index, cfg.policy, state.policy_rng);
    state.last_decision.reset();
  }
}

}  // namespace

template <typename T>
VosStep<T> vos_predict(Model<T>& model, ModelState<T>& state, const Graph<T>& g,
                       const Var<T>& frame) {
  if (!state.initialized()) throw StateError("vos_predict before vos_init");
  Var<T> q = model.encode_query(g, frame);
  state.last_query = q;
  VosStep<T> out;
  out.readout = read_memory(model, state, g, q);
  out.logits = model.decode(g, out.readout);
  out.foreground =
      ops::sigmoid(ops::sub(ops::slice(out.logits, 1, 2), ops::slice(out.logits, 0, 1)));
  state.last_prediction = out.foreground;
  return out;
}

template <typename T>
void vos_commit(Model<T>& model, ModelState<T>& state, const Graph<T>& g, const Var<T>& frame,
                const Var<T>& mask, std::size_t frame_index) {
  if (!state.initialized()) throw StateError("vos_commit before vos_init");
  write_memory(model, state, g, model.encode_memory_vos(g, frame, mask), frame_index);
  ++state.steps;
}

template <typename T>
void vos_init(Model<T>& model, ModelState<T>& state, const Graph<T>& g, const Var<T>& frame,
              const Var<T>& mask) {
  if (state.initialized()) throw StateError("vos_init on an initialized state");
  state.bank.append(model.encode_memory_vos(g, frame, mask), 0);
  state.last_prediction = mask;
}

template <typename T>
VosStep<T> vos_step(Model<T>& model, ModelState<T>& state, const Graph<T>& g, const Var<T>& frame,
                    std::size_t frame_index) {
  VosStep<T> out = vos_predict(model, state, g, frame);
  vos_commit(model, state, g, frame, out.foreground, frame_index);
  return out;
}

template <typename T>
Var<T> prediction_step(Model<T>& model, ModelState<T>& state, const Graph<T>& g,
                       const std::vector<Var<T>>& clip, std::size_t target_index) {
  if (target_index < clip.size()) {
    throw ContractError("prediction_step: target frame " + std::to_string(target_index) +
                        " has fewer than " + std::to_string(clip.size()) + " predecessors");
  }
  Var<T> x = model.encode_clip(g, clip);
  const bool seed_memory = !state.initialized();
  if (seed_memory) state.bank.append(x, target_index - 1);
  state.last_query = x;
  ReadOut<T> r = read_memory(model, state, g, x);
  Var<T> frame = model.decode(g, r);
  if (!seed_memory) write_memory(model, state, g, x, target_index - 1);
  state.last_prediction = frame;
  ++state.steps;
  return frame;
}

#define STRM_INSTANTIATE_MODELS(T)                                                            \
  template class Encoder<T>;                                                                  \
  template class Decoder<T>;                                                                  \
  template class Model<T>;                                                                    \
  template struct ModelState<T>;                                                              \
  template ReadOut<T> read_memory(Model<T>&, ModelState<T>&, const Graph<T>&, const Var<T>&); \
  template VosStep<T> vos_predict(Model<T>&, ModelState<T>&, const Graph<T>&, const Var<T>&); \
  template void vos_commit(Model<T>&, ModelState<T>&, const Graph<T>&, const Var<T>&,         \
                           const Var<T>&, std::size_t);                                       \
  template void vos_init(Model<T>&, ModelState<T>&, const Graph<T>&, const Var<T>&,           \
                         const Var<T>&);                                                      \
  template VosStep<T> vos_step(Model<T>&, ModelState<T>&, const Graph<T>&, const Var<T>&,     \
                               std::size_t);                                                  \
  template Var<T> prediction_step(Model<T>&, ModelState<T>&, const Graph<T>&,                 \
                                  const std::vector<Var<T>>&, std::size_t);

STRM_INSTANTIATE_MODELS(float)
STRM_INSTANTIATE_MODELS(double)

#undef STRM_INSTANTIATE_MODELS

}  // namespace strm
