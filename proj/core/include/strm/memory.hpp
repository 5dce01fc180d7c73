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

#ifndef STRM_MEMORY_HPP_
#define STRM_MEMORY_HPP_

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "strm/autodiff.hpp"
#include "strm/layers.hpp"
#include "strm/random.hpp"

namespace strm {

// Slot-replacement policies. The rule kinds carry the letters of the classic
// ablation: A oldest, B newest, C random drop, D random select, E first+last,
// F most similar.
enum class Policy {
  kLearned,
  kOldest,
  kNewest,
  kRandomDrop,
  kRandomSelect,
  kFirstLast,
  kMostSimilar,
};

Policy parse_policy(std::string_view name);
std::string_view policy_name(Policy p);

// kSoftPath keeps the Gumbel noise of kTrain but writes with the soft weights
// instead of the straight-through one-hot, so finite differences can probe
// the path the estimator's backward follows.
enum class UpdateMode { kTrain, kEval, kSoftPath };

template <typename T>
struct SlotEntry {
  Var<T> tmpl;
  std::size_t frame_index = 0;
  bool pinned = false;
};

// Fixed-capacity, spatially indexed template store.
template <typename T>
class MemoryBank {
 public:
  MemoryBank(std::size_t capacity, Policy policy);

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return slots_.size(); }
  bool empty() const noexcept { return slots_.empty(); }
  bool full() const noexcept { return slots_.size() >= capacity_; }
  Policy policy() const noexcept { return policy_; }
  std::size_t peak_size() const noexcept { return peak_; }
  const std::vector<SlotEntry<T>>& slots() const noexcept { return slots_; }
  const SlotEntry<T>& slot(std::size_t i) const { return slots_.at(i); }
  std::vector<std::size_t> frame_indices() const;
  Shape template_shape() const;

  // Index of the non-pinned slot holding the most recent frame (the pinned
  // slot when it is the only one).
  std::size_t latest_slot() const;
  // True for slots that a policy may evict: neither pinned nor latest.
  std::vector<bool> eligible_mask() const;
  std::vector<std::size_t> eligible_slots() const;

  // The first template ever inserted becomes the pinned first-frame slot.
  void append(Var<T> tmpl, std::size_t frame_index);
  void replace(std::size_t slot, Var<T> tmpl, std::size_t frame_index);
  void set_template(std::size_t slot, Var<T> tmpl);
  void erase(std::size_t slot);

  // Count of frames that have left the "latest" position; drives the
  // reservoir rule.
  std::size_t intermediates_seen() const noexcept { return intermediates_seen_; }

 private:
  void check_insert(const Var<T>& tmpl, std::size_t frame_index) const;

  std::size_t capacity_;
  Policy policy_;
  std::vector<SlotEntry<T>> slots_;
  std::size_t peak_ = 0;
  std::size_t intermediates_seen_ = 0;
  std::optional<std::size_t> last_frame_;
};

template <typename T>
struct UpdateDecision {
  Tensor<T> scores;
  Tensor<T> noise;
  T tau = T(1);
  Var<T> soft;
  Var<T> hard;
  std::vector<bool> eligible;
  std::size_t selected = 0;
};

// Convolutional map C -> D_u applied with shared weights to both the incoming
// template and every stored one.
template <typename T>
struct UpdateKeyProjector {
  Conv2d<T> conv;

  UpdateKeyProjector() = default;
  UpdateKeyProjector(std::size_t channels, std::size_t key_channels, Rng& rng)
      : conv(channels, key_channels, 3, 1, rng) {}

  void collect(ParameterSet<T>& set, const std::string& prefix) { conv.collect(set, prefix); }
};

template <typename T>
Var<T> project_update_keys(const Graph<T>& g, const Var<T>& x, UpdateKeyProjector<T>& proj);

// Mean over positions p of the best cosine match max_q cos(u_q(p), u_m(q)).
template <typename T>
Var<T> similarity(const Var<T>& u_q, const Var<T>& u_m);

// softmax((s + g) / tau) over eligible entries; zero elsewhere.
template <typename T>
Var<T> gumbel_softmax(const Var<T>& scores, T tau, const Tensor<T>& noise,
                      const std::vector<bool>& eligible = {});

// Draws iid Gumbel(0,1) samples, or zeros in deterministic mode.
class GumbelNoise {
 public:
  explicit GumbelNoise(std::uint64_t seed, bool deterministic = false)
      : rng_(seed), deterministic_(deterministic) {}
  template <typename T>
  Tensor<T> sample(std::size_t n) {
    Tensor<T> g({n});
    if (!deterministic_)
      for (auto& v : g.data()) v = static_cast<T>(rng_.gumbel());
    return g;
  }

 private:
  Rng rng_;
  bool deterministic_;
};

struct FusionOverrides {
  std::optional<double> r;
  std::optional<double> z;
};

// Three small conv nets over concatenated channel pairs (2C -> C) that merge a
// template about to be deleted into another slot. Off unless enabled.
template <typename T>
struct FusionModule {
  bool enabled = false;
  Conv2d<T> f, h, g;

  FusionModule() = default;
  FusionModule(std::size_t channels, Rng& rng)
      : enabled(true),
        f(2 * channels, channels, 3, 1, rng),
        h(2 * channels, channels, 3, 1, rng),
        g(2 * channels, channels, 3, 1, rng) {}

  void collect(ParameterSet<T>& set, const std::string& prefix) {
    f.collect(set, prefix + ".f");
    h.collect(set, prefix + ".h");
    g.collect(set, prefix + ".g");
  }
};

template <typename T>
struct FusionTrace {
  Var<T> aligned_target;    // FAM(X_i, X_j)
  Var<T> r;
  Var<T> filtered_deleted;  // r * X_i
  Var<T> aligned_deleted;   // FAM(X_j, r * X_i)
  Var<T> z;
  Var<T> fused;             // new X_j
};

// softmax(A B^T) B over flattened positions, A and B of shape C x H x W.
template <typename T>
Var<T> align_features(const Var<T>& a, const Var<T>& b);

template <typename T>
FusionTrace<T> fuse_templates(const Graph<T>& g, const Var<T>& deleted, const Var<T>& target,
                              FusionModule<T>& fusion, const FusionOverrides& overrides = {});

// Replaces slot target_index by the fusion of itself with slot deleted_index.
template <typename T>
void fusion_update(const Graph<T>& g, MemoryBank<T>& bank, std::size_t deleted_index,
                   std::size_t target_index, FusionModule<T>& fusion,
                   const FusionOverrides& overrides = {});

struct UpdateOptions {
  double tau = 1.0;
  UpdateMode mode = UpdateMode::kEval;
};

// Learned update. Appends while the bank has room; otherwise scores every
// slot against the incoming template, samples the straight-through
// Gumbel-Softmax over eligible slots and overwrites the selected one.
// `scoring` is the map used to compute scores (defaults to x_new).
template <typename T>
std::optional<UpdateDecision<T>> update_memory(const Graph<T>& g, MemoryBank<T>& bank,
                                               const Var<T>& x_new, std::size_t frame_index,
                                               UpdateKeyProjector<T>& proj, GumbelNoise& noise,
                                               const UpdateOptions& opts,
                                               const Var<T>* scoring = nullptr,
                                               FusionModule<T>* fusion = nullptr);

// Writes x_new with an externally supplied selection vector. Untracked hard
// selections overwrite the argmax slot; otherwise (or with `blend_all`) every
// eligible slot becomes (1 - a_i) X_i + a_i X_new.
template <typename T>
void apply_selection(MemoryBank<T>& bank, const Var<T>& x_new, std::size_t frame_index,
                     const Var<T>& weights, bool blend_all = false);

// Rule-based update for the non-learned policies. `rng` is dedicated to the
// random rules and independent from the Gumbel noise.
template <typename T>
void baseline_policy_update(MemoryBank<T>& bank, const Var<T>& x_new, std::size_t frame_index,
                            Policy kind, Rng& rng);

}  // namespace strm

#endif  // STRM_MEMORY_HPP_
