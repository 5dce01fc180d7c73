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

#include "strm/memory.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <utility>

#include "strm/ops.hpp"

namespace strm {
namespace {

struct PolicyName {
  Policy policy;
  std::string_view name;
  std::string_view letter;
};

constexpr std::array<PolicyName, 7> kPolicyNames{{
    {Policy::kLearned, "learned", "learned"},
    {Policy::kOldest, "oldest", "A"},
    {Policy::kNewest, "newest", "B"},
    {Policy::kRandomDrop, "random-drop", "C"},
    {Policy::kRandomSelect, "random-select", "D"},
    {Policy::kFirstLast, "first-last", "E"},
    {Policy::kMostSimilar, "most-similar", "F"},
}};

}  // namespace

Policy parse_policy(std::string_view name) {
  for (const auto& p : kPolicyNames)
    if (name == p.name || name == p.letter) return p.policy;
  throw ConfigError("unknown memory policy '" + std::string(name) + "'");
}

std::string_view policy_name(Policy p) {
  for (const auto& e : kPolicyNames)
    if (e.policy == p) return e.name;
  return "unknown";
}

template <typename T>
MemoryBank<T>::MemoryBank(std::size_t capacity, Policy policy)
    : capacity_(capacity), policy_(policy) {
  if (capacity == 0) throw ConfigError("memory capacity must be positive");
  if (policy == Policy::kLearned && capacity < 3) {
    throw ConfigError("learned policy needs K >= 3 (pinned + latest + one eligible slot), got K=" +
                      std::to_string(capacity));
  }
}

template <typename T>
std::vector<std::size_t> MemoryBank<T>::frame_indices() const {
  std::vector<std::size_t> out;
  for (const auto& s : slots_) out.push_back(s.frame_index);
  return out;
}

template <typename T>
Shape MemoryBank<T>::template_shape() const {
  if (slots_.empty()) throw StateError("memory bank is empty");
  return slots_.front().tmpl.shape();
}

template <typename T>
std::size_t MemoryBank<T>::latest_slot() const {
  if (slots_.empty()) throw StateError("memory bank is empty");
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].pinned) continue;
    if (!best || slots_[i].frame_index > slots_[*best].frame_index) best = i;
  }
  return best.value_or(0);
}

template <typename T>
std::vector<bool> MemoryBank<T>::eligible_mask() const {
  std::vector<bool> mask(slots_.size(), false);
  if (slots_.empty()) return mask;
  const std::size_t latest = latest_slot();
  for (std::size_t i = 0; i < slots_.size(); ++i) mask[i] = !slots_[i].pinned && i != latest;
  return mask;
}

template <typename T>
std::vector<std::size_t> MemoryBank<T>::eligible_slots() const {
  std::vector<std::size_t> out;
  const auto mask = eligible_mask();
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(i);
  return out;
}

template <typename T>
void MemoryBank<T>::check_insert(const Var<T>& tmpl, std::size_t frame_index) const {
  if (!tmpl.valid() || tmpl.size() == 0) throw ConfigError("cannot store an empty template");
  if (!slots_.empty() && tmpl.shape() != slots_.front().tmpl.shape()) {
    throw DimensionError("template shape " + shape_string(tmpl.shape()) +
                         " does not match bank slots " + shape_string(slots_.front().tmpl.shape()));
  }
  if (last_frame_ && frame_index <= *last_frame_) {
    throw ContractError("frame index " + std::to_string(frame_index) +
                        " does not follow the last inserted frame " +
                        std::to_string(*last_frame_));
  }
}

template <typename T>
void MemoryBank<T>::append(Var<T> tmpl, std::size_t frame_index) {
  check_insert(tmpl, frame_index);
  if (full()) throw StateError("append on a full memory bank");
  if (!slots_.empty() && slots_.size() > 1) ++intermediates_seen_;
  slots_.push_back({std::move(tmpl), frame_index, slots_.empty()});
  last_frame_ = frame_index;
  peak_ = std::max(peak_, slots_.size());
}

template <typename T>
void MemoryBank<T>::replace(std::size_t slot, Var<T> tmpl, std::size_t frame_index) {
  check_insert(tmpl, frame_index);
  auto& s = slots_.at(slot);
  if (s.pinned) throw ContractError("the pinned first-frame slot cannot be replaced");
  if (slots_.size() > 1) ++intermediates_seen_;
  s.tmpl = std::move(tmpl);
  s.frame_index = frame_index;
  last_frame_ = frame_index;
}

template <typename T>
void MemoryBank<T>::set_template(std::size_t slot, Var<T> tmpl) {
  auto& s = slots_.at(slot);
  if (tmpl.shape() != s.tmpl.shape()) {
    throw DimensionError("template shape " + shape_string(tmpl.shape()) +
                         " does not match slot " + shape_string(s.tmpl.shape()));
  }
  s.tmpl = std::move(tmpl);
}

template <typename T>
void MemoryBank<T>::erase(std::size_t slot) {
  if (slot >= slots_.size()) throw StateError("erase: slot out of range");
  if (slots_[slot].pinned) throw ContractError("the pinned first-frame slot cannot be removed");
  slots_.erase(slots_.begin() + static_cast<std::ptrdiff_t>(slot));
}

template <typename T>
Var<T> project_update_keys(const Graph<T>& g, const Var<T>& x, UpdateKeyProjector<T>& proj) {
  return proj.conv(g, x);
}

template <typename T>
Var<T> similarity(const Var<T>& u_q, const Var<T>& u_m) {
  if (u_q.shape() != u_m.shape() || u_q.value().rank() != 3) {
    throw DimensionError("similarity: key maps must share a C x H x W shape, got " +
                         shape_string(u_q.shape()) + " and " + shape_string(u_m.shape()));
  }
  const std::size_t c = u_q.shape()[0];
  const std::size_t hw = u_q.shape()[1] * u_q.shape()[2];
  // The smallest normal value only guards 0/0, so cosines of nonzero pixels
  // stay exact however small their norm.
  const T eps = std::numeric_limits<T>::min();
  Var<T> nq = ops::reshape(ops::l2_normalize(u_q, eps), {c, hw});
  Var<T> nm = ops::reshape(ops::l2_normalize(u_m, eps), {c, hw});
  Var<T> cosine = ops::matmul(ops::transpose(nq), nm);  // [p, q]
  return ops::mean(ops::max_last(cosine));
}

template <typename T>
Var<T> gumbel_softmax(const Var<T>& scores, T tau, const Tensor<T>& noise,
                      const std::vector<bool>& eligible) {
  if (!(tau > T(0))) throw ConfigError("Gumbel-Softmax temperature must be positive");
  if (noise.shape() != scores.shape()) {
    throw DimensionError("Gumbel noise shape " + shape_string(noise.shape()) +
                         " does not match scores " + shape_string(scores.shape()));
  }
  Var<T> perturbed = ops::add(scores, constant(noise));
  return ops::softmax(ops::scale(perturbed, T(1) / tau), eligible);
}

template <typename T>
Var<T> align_features(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape() || a.value().rank() != 3) {
    throw DimensionError("align_features: expected equal C x H x W maps, got " +
                         shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const Shape shape = a.shape();
  const std::size_t c = shape[0], n = shape[1] * shape[2];
  Var<T> am = ops::reshape(a, {c, n});
  Var<T> bm = ops::reshape(b, {c, n});
  Var<T> weights = ops::softmax(ops::matmul(ops::transpose(am), bm));  // n x n
  Var<T> aligned = ops::matmul(weights, ops::transpose(bm));            // n x c
  return ops::reshape(ops::transpose(aligned), shape);
}

template <typename T>
FusionTrace<T> fuse_templates(const Graph<T>& g, const Var<T>& deleted, const Var<T>& target,
                              FusionModule<T>& fusion, const FusionOverrides& overrides) {
  if (!fusion.enabled) throw UnsupportedError("fusion module is disabled");
  FusionTrace<T> tr;
  tr.aligned_target = align_features(deleted, target);
  tr.r = overrides.r ? constant(Tensor<T>(deleted.shape(), static_cast<T>(*overrides.r)))
                     : ops::sigmoid(fusion.f(g, ops::concat<T>({deleted, tr.aligned_target})));
  tr.filtered_deleted = ops::mul(tr.r, deleted);
  tr.aligned_deleted = align_features(target, tr.filtered_deleted);
  Var<T> pair = ops::concat<T>({tr.aligned_deleted, target});
  tr.z = overrides.z ? constant(Tensor<T>(target.shape(), static_cast<T>(*overrides.z)))
                     : ops::sigmoid(fusion.h(g, pair));
  Var<T> candidate = ops::tanh(fusion.g(g, pair));
  Var<T> keep = ops::add_scalar(ops::scale(tr.z, T(-1)), T(1));
  tr.fused = ops::add(ops::mul(keep, target), ops::mul(tr.z, candidate));
  return tr;
}

template <typename T>
void fusion_update(const Graph<T>& g, MemoryBank<T>& bank, std::size_t deleted_index,
                   std::size_t target_index, FusionModule<T>& fusion,
                   const FusionOverrides& overrides) {
  if (!fusion.enabled) throw UnsupportedError("fusion_update called with fusion disabled");
  if (deleted_index == target_index || deleted_index >= bank.size() ||
      target_index >= bank.size()) {
    throw ContractError("fusion_update: slots must be distinct and in range");
  }
  FusionTrace<T> tr = fuse_templates(g, bank.slot(deleted_index).tmpl,
                                     bank.slot(target_index).tmpl, fusion, overrides);
  bank.set_template(target_index, tr.fused);
}

template <typename T>
void apply_selection(MemoryBank<T>& bank, const Var<T>& x_new, std::size_t frame_index,
                     const Var<T>& hard, bool blend_all) {
  if (hard.size() != bank.size()) {
    throw DimensionError("selection vector length " + std::to_string(hard.size()) +
                         " does not match bank size " + std::to_string(bank.size()));
  }
  std::size_t selected = 0;
  for (std::size_t i = 1; i < hard.size(); ++i)
    if (hard.value()[i] > hard.value()[selected]) selected = i;
  if (!hard.tracked() && !blend_all) {
    bank.replace(selected, x_new, frame_index);
    return;
  }
  // Keep every eligible slot on the gradient path: X_i <- (1-a_i) X_i + a_i X_new.
  const auto mask = bank.eligible_mask();
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (!mask[i] || i == selected) continue;
    bank.set_template(i, ops::blend(bank.slot(i).tmpl, x_new, ops::element(hard, i)));
  }
  bank.replace(selected, ops::blend(bank.slot(selected).tmpl, x_new, ops::element(hard, selected)),
               frame_index);
}

template <typename T>
std::optional<UpdateDecision<T>> update_memory(const Graph<T>& g, MemoryBank<T>& bank,
                                               const Var<T>& x_new, std::size_t frame_index,
                                               UpdateKeyProjector<T>& proj, GumbelNoise& noise,
                                               const UpdateOptions& opts, const Var<T>* scoring,
                                               FusionModule<T>* fusion) {
  if (!x_new.valid() || x_new.size() == 0) throw ConfigError("cannot store an empty template");
  if (bank.policy() != Policy::kLearned) {
    throw ConfigError("update_memory requires the learned policy, bank uses " +
                      std::string(policy_name(bank.policy())));
  }
  if (!bank.full()) {
    bank.append(x_new, frame_index);
    return std::nullopt;
  }
  if (!(opts.tau > 0)) throw ConfigError("Gumbel-Softmax temperature must be positive");
  const Var<T>& scored = scoring ? *scoring : x_new;
  Var<T> u_new = project_update_keys(g, scored, proj);
  std::vector<Var<T>> slot_keys;
  std::vector<Var<T>> scores;
  for (const auto& s : bank.slots()) {
    slot_keys.push_back(project_update_keys(g, s.tmpl, proj));
    scores.push_back(similarity(u_new, slot_keys.back()));
  }
  UpdateDecision<T> d;
  d.tau = static_cast<T>(opts.tau);
  d.eligible = bank.eligible_mask();
  Var<T> score_vec = ops::stack(scores);
  d.scores = score_vec.value();
  d.noise = opts.mode != UpdateMode::kEval ? noise.sample<T>(bank.size()) : Tensor<T>({bank.size()});
  d.soft = gumbel_softmax(score_vec, d.tau, d.noise, d.eligible);
  d.hard = ops::straight_through(d.soft);
  for (std::size_t i = 0; i < bank.size(); ++i)
    if (d.hard.value()[i] == T(1)) d.selected = i;

  if (fusion && fusion->enabled) {
    // Merge the outgoing template into the least similar remaining slot.
    std::optional<std::size_t> target;
    T best = T(0);
    for (std::size_t j = 0; j < bank.size(); ++j) {
      if (j == d.selected || bank.slot(j).pinned) continue;
      const T s = similarity(slot_keys[d.selected], slot_keys[j]).value()[0];
      if (!target || s < best) {
        target = j;
        best = s;
      }
    }
    if (target) fusion_update(g, bank, d.selected, *target, *fusion);
  }
  if (opts.mode == UpdateMode::kSoftPath)
    apply_selection(bank, x_new, frame_index, d.soft, true);
  else
    apply_selection(bank, x_new, frame_index, d.hard);
  return d;
}

template <typename T>
void baseline_policy_update(MemoryBank<T>& bank, const Var<T>& x_new, std::size_t frame_index,
                            Policy kind, Rng& rng) {
  if (kind == Policy::kLearned) {
    throw ConfigError("baseline_policy_update: 'learned' is not a rule-based policy");
  }
  if (!x_new.valid() || x_new.size() == 0) throw ConfigError("cannot store an empty template");
  if (kind == Policy::kFirstLast) {
    // Only the pinned first frame survives next to the newest frame.
    while (bank.size() > 1) bank.erase(bank.size() - 1);
    bank.append(x_new, frame_index);
    return;
  }
  if (!bank.full()) {
    bank.append(x_new, frame_index);
    return;
  }
  const auto eligible = bank.eligible_slots();
  if (eligible.empty()) {
    throw ConfigError("policy " + std::string(policy_name(kind)) +
                      " has no evictable slot with K=" + std::to_string(bank.capacity()));
  }
  auto by_frame = [&bank](std::size_t a, std::size_t b) {
    return bank.slot(a).frame_index < bank.slot(b).frame_index;
  };
  std::size_t victim = eligible.front();
  switch (kind) {
    case Policy::kOldest:
      victim = *std::min_element(eligible.begin(), eligible.end(), by_frame);
      break;
    case Policy::kNewest:
      victim = *std::max_element(eligible.begin(), eligible.end(), by_frame);
      break;
    case Policy::kRandomDrop:
      victim = eligible[rng.below(eligible.size())];
      break;
    case Policy::kRandomSelect: {
      // Reservoir step: the outgoing latest frame is the m-th intermediate.
      const std::uint64_t m = bank.intermediates_seen() + 1;
      const std::uint64_t j = rng.below(m);
      victim = j < eligible.size() ? eligible[j] : bank.latest_slot();
      break;
    }
    case Policy::kMostSimilar: {
      T best = T(0);
      for (std::size_t k = 0; k < eligible.size(); ++k) {
        const T s = similarity(x_new, bank.slot(eligible[k]).tmpl).value()[0];
        if (k == 0 || s > best) {
          best = s;
          victim = eligible[k];
        }
      }
      break;
    }
    default:
      throw ConfigError("unknown baseline policy");
  }
  bank.erase(victim);
  bank.append(x_new, frame_index);
}

#define STRM_INSTANTIATE_MEMORY(T)                                                          \
  template class MemoryBank<T>;                                                             \
  template Var<T> project_update_keys(const Graph<T>&, const Var<T>&, UpdateKeyProjector<T>&); \
  template Var<T> similarity(const Var<T>&, const Var<T>&);                                 \
  template Var<T> gumbel_softmax(const Var<T>&, T, const Tensor<T>&, const std::vector<bool>&); \
  template Var<T> align_features(const Var<T>&, const Var<T>&);                             \
  template FusionTrace<T> fuse_templates(const Graph<T>&, const Var<T>&, const Var<T>&,     \
                                         FusionModule<T>&, const FusionOverrides&);         \
  template void fusion_update(const Graph<T>&, MemoryBank<T>&, std::size_t, std::size_t,    \
                              FusionModule<T>&, const FusionOverrides&);                    \
  template void apply_selection(MemoryBank<T>&, const Var<T>&, std::size_t, const Var<T>&, bool); \
  template std::optional<UpdateDecision<T>> update_memory(                                  \
      const Graph<T>&, MemoryBank<T>&, const Var<T>&, std::size_t, UpdateKeyProjector<T>&,  \
      GumbelNoise&, const UpdateOptions&, const Var<T>*, FusionModule<T>*);                 \
  template void baseline_policy_update(MemoryBank<T>&, const Var<T>&, std::size_t, Policy, Rng&);

STRM_INSTANTIATE_MEMORY(float)
STRM_INSTANTIATE_MEMORY(double)

#undef STRM_INSTANTIATE_MEMORY

}  // namespace strm
