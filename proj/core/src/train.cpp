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
#include <cmath>
#include <cstdio>
#include <fstream>

#include "strm/errors.hpp"
#include "strm/harness.hpp"
#include "strm/ops.hpp"

namespace fs = std::filesystem;

namespace strm {

template <typename T>
void Adam<T>::step(ParameterSet<T>& params, double lr) {
  const auto& entries = params.entries();
  if (m_.empty()) {
    for (const auto& e : entries) {
      m_.emplace_back(e.param->value.shape());
      v_.emplace_back(e.param->value.shape());
    }
  }
  if (m_.size() != entries.size()) throw StateError("optimizer bound to a different parameter set");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Parameter<T>& p = *entries[k].param;
    if (p.grad.shape() != p.value.shape()) continue;  // never touched
    T* w = p.value.raw();
    const T* g = p.grad.raw();
    T* m = m_[k].raw();
    T* v = v_[k].raw();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      m[i] = T(beta1_ * m[i] + (1 - beta1_) * g[i]);
      v[i] = T(beta2_ * v[i] + (1 - beta2_) * double(g[i]) * g[i]);
      const double mh = m[i] / c1, vh = v[i] / c2;
      w[i] = T(w[i] - lr * mh / (std::sqrt(vh) + eps_));
    }
  }
}

double learning_rate(const RunConfig& cfg, std::size_t step) {
  const double total = double(std::max<std::size_t>(1, cfg.steps));
  const double pi = 3.141592653589793;
  auto cosine = [&](double hi, double lo, double progress) {
    return lo + 0.5 * (hi - lo) * (1 + std::cos(pi * std::clamp(progress, 0.0, 1.0)));
  };
  switch (cfg.schedule) {
    case Schedule::kConstant:
      return cfg.lr;
    case Schedule::kCosine:
      return cosine(cfg.lr, cfg.lr_min, double(step) / std::max(1.0, total - 1));
    case Schedule::kTwoPhase: {
      const double start = std::floor(cfg.finetune_start * total);
      if (double(step) < start) return cfg.lr;
      return cosine(cfg.finetune_lr, cfg.lr_min, (double(step) - start) / std::max(1.0, total - start - 1));
    }
  }
  return cfg.lr;
}

namespace {

template <typename T>
Var<T> image_var(const Image& img) {
  return constant(img.cast<T>());
}

template <typename T>
Var<T> object_mask_var(const LabelMap& m, int object) {
  Tensor<T> t({1, m.height, m.width});
  for (std::size_t i = 0; i < m.labels.size(); ++i) t[i] = m.labels[i] == object ? T(1) : T(0);
  return constant(std::move(t));
}

template <typename T>
Var<T> mean_of(const std::vector<Var<T>>& terms) {
  if (terms.empty()) throw ContractError("clip produced no loss terms");
  Var<T> total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = ops::add(total, terms[i]);
  return ops::scale(total, T(1) / T(terms.size()));
}

template <typename T>
double parameter_norm(const ParameterSet<T>& params) {
  double s = 0;
  for (const auto& e : params.entries())
    for (T v : e.param->value.data()) s += double(v) * double(v);
  return std::sqrt(s);
}

template <typename T>
void clip_gradients(ParameterSet<T>& params, double max_norm) {
  double s = 0;
  for (const auto& e : params.entries())
    for (T v : e.param->grad.data()) s += double(v) * double(v);
  const double norm = std::sqrt(s);
  if (norm <= max_norm || norm == 0) return;
  const T factor = T(max_norm / norm);
  for (const auto& e : params.entries())
    for (T& v : e.param->grad.data()) v *= factor;
}

std::string step_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06zu.strm", step);
  return buf;
}

struct Phase {
  std::size_t steps;
  std::size_t clip_length;
  std::uint64_t sampler_stream;
  std::uint64_t noise_stream;
  bool main;
};

template <typename T>
void run_phase(const RunConfig& cfg, const Phase& phase, const std::vector<SequenceSample>& data, Model<T>& model,
               TrainResult& result, const StepCallback& on_step) {
  Adam<T> adam;
  Rng sampler(Rng::mix(cfg.seed, phase.sampler_stream));
  const std::size_t offset = result.log.loss.size();
  for (std::size_t step = 0; step < phase.steps; ++step) {
    const SequenceSample& seq = data[data.size() > 1 ? sampler.below(data.size()) : 0];
    std::size_t start = 0;
    const std::size_t slack = seq.length() - phase.clip_length;
    if (cfg.random_clips && slack > 0) start = sampler.below(slack + 1);
    std::vector<Image> frames(seq.frames.begin() + long(start),
                              seq.frames.begin() + long(start + phase.clip_length));
    const std::uint64_t noise_seed = Rng::mix(cfg.seed, phase.noise_stream + step);

    Tape<T> tape;
    Graph<T> g(&tape);
    model.parameters().zero_grad();
    Var<T> loss;
    if (cfg.model.task == Task::kVos) {
      std::vector<LabelMap> masks;
      for (std::size_t t = start; t < start + phase.clip_length; ++t) masks.push_back(*seq.masks[t]);
      std::vector<int> present;
      for (int o = 1; o <= seq.object_count; ++o)
        if (masks.front().count(o) > 0) present.push_back(o);
      const std::uint64_t pick = sampler.bits();
      const int object = present.empty() ? 1 : present[pick % present.size()];
      loss = vos_clip_loss(model, g, frames, masks, object, noise_seed, UpdateMode::kTrain);
    } else {
      loss = prediction_clip_loss(model, g, frames, noise_seed, UpdateMode::kTrain);
    }
    const double value = double(loss.value().item());
    if (!std::isfinite(value)) {
      char buf[192];
      std::snprintf(buf, sizeof buf, "non-finite loss at %sstep %zu (parameter L2 norm %.6g)",
                    phase.main ? "" : "pretraining ", step, parameter_norm(model.parameters()));
      throw TrainingError(buf);
    }
    tape.backward(loss);
    if (cfg.grad_clip > 0) clip_gradients(model.parameters(), cfg.grad_clip);
    const double lr = phase.main ? learning_rate(cfg, step) : cfg.lr;
    adam.step(model.parameters(), lr);
    result.log.loss.push_back(value);
    result.log.lr.push_back(lr);
    if (on_step) on_step(offset + step, value);

    if (phase.main && cfg.checkpoint_every && !cfg.checkpoint_dir.empty() &&
        (step + 1) % cfg.checkpoint_every == 0) {
      const fs::path p = fs::path(cfg.checkpoint_dir) / step_name(step + 1);
      save_checkpoint(p, capture_parameters(model.parameters()));
      result.log.checkpoints.push_back(p);
    }
  }
}

template <typename T>
TrainResult train_impl(const RunConfig& cfg, const std::vector<SequenceSample>& data, const Checkpoint* init,
                       const StepCallback& on_step) {
  if (data.empty()) throw ContractError("training needs at least one sequence");
  const std::size_t longest = std::max(cfg.clip_length, cfg.pretrain_steps ? cfg.pretrain_clip_length : 0);
  for (const auto& s : data) {
    if (s.length() < longest)
      throw ContractError("sequence '" + s.name + "' has " + std::to_string(s.length()) +
                          " frames, shorter than the training clip length " + std::to_string(longest));
    if (cfg.model.task == Task::kVos)
      for (std::size_t t = 0; t < s.masks.size(); ++t)
        if (!s.masks[t])
          throw ContractError("VOS training needs a mask for every frame; '" + s.name + "' lacks frame " +
                              std::to_string(t));
  }

  Model<T> model(cfg.model, Rng::mix(cfg.seed, 1));
  if (init) warm_start_parameters(model.parameters(), *init);
  TrainResult result;
  if (cfg.pretrain_steps) {
    run_phase(cfg, Phase{cfg.pretrain_steps, cfg.pretrain_clip_length, 2, 2000000, false}, data, model, result,
              on_step);
    result.log.pretrain_steps = cfg.pretrain_steps;
    if (!cfg.checkpoint_dir.empty()) {
      const fs::path p = fs::path(cfg.checkpoint_dir) / "pretrain.strm";
      save_checkpoint(p, capture_parameters(model.parameters()));
      result.log.checkpoints.push_back(p);
    }
  }
  run_phase(cfg, Phase{cfg.steps, cfg.clip_length, 3, 1000000, true}, data, model, result, on_step);
  result.checkpoint = capture_parameters(model.parameters());
  if (!cfg.checkpoint_dir.empty()) {
    const fs::path p = fs::path(cfg.checkpoint_dir) / "final.strm";
    save_checkpoint(p, result.checkpoint);
    result.log.checkpoints.push_back(p);
  }
  return result;
}

}  // namespace

template <typename T>
Var<T> vos_clip_loss(Model<T>& model, const Graph<T>& g, const std::vector<Image>& frames,
                     const std::vector<LabelMap>& masks, int object, std::uint64_t noise_seed, UpdateMode mode) {
  if (frames.size() < 2 || masks.size() != frames.size())
    throw ContractError("VOS clip needs >= 2 frames with one mask each");
  ModelState<T> state(model.config(), noise_seed, mode);
  vos_init(model, state, g, image_var<T>(frames[0]), object_mask_var<T>(masks[0], object));
  std::vector<Var<T>> terms;
  for (std::size_t t = 1; t < frames.size(); ++t) {
    VosStep<T> step = vos_step(model, state, g, image_var<T>(frames[t]), t);
    std::vector<int> labels(masks[t].labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = masks[t].labels[i] == object ? 1 : 0;
    terms.push_back(ops::cross_entropy(step.logits, labels));
  }
  return mean_of(terms);
}

template <typename T>
Var<T> prediction_clip_loss(Model<T>& model, const Graph<T>& g, const std::vector<Image>& frames,
                            std::uint64_t noise_seed, UpdateMode mode) {
  const std::size_t cf = model.config().clip_frames;
  if (frames.size() <= cf) throw ContractError("prediction clip must be longer than the input stack");
  ModelState<T> state(model.config(), noise_seed, mode);
  std::vector<Var<T>> inputs;
  for (const auto& f : frames) inputs.push_back(image_var<T>(f));
  std::vector<Var<T>> terms;
  for (std::size_t target = cf; target < frames.size(); ++target) {
    std::vector<Var<T>> clip(inputs.begin() + long(target - cf), inputs.begin() + long(target));
    Var<T> pred = prediction_step(model, state, g, clip, target);
    terms.push_back(ops::add(ops::mae(pred, inputs[target]), ops::mse(pred, inputs[target])));
  }
  return mean_of(terms);
}

TrainResult train(const RunConfig& cfg, const std::vector<SequenceSample>& data, const StepCallback& on_step) {
  cfg.validate();
  if (!cfg.init_checkpoint.empty()) return train(cfg, data, load_checkpoint(cfg.init_checkpoint), on_step);
  return cfg.precision == 64 ? train_impl<double>(cfg, data, nullptr, on_step)
                             : train_impl<float>(cfg, data, nullptr, on_step);
}

TrainResult train(const RunConfig& cfg, const std::vector<SequenceSample>& data, const Checkpoint& init,
                  const StepCallback& on_step) {
  cfg.validate();
  return cfg.precision == 64 ? train_impl<double>(cfg, data, &init, on_step)
                             : train_impl<float>(cfg, data, &init, on_step);
}

void write_loss_csv(const fs::path& path, const TrainLog& log) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,loss,lr\n";
  char buf[96];
  for (std::size_t i = 0; i < log.loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", i, log.loss[i], log.lr[i]);
    out << buf;
  }
}

Checkpoint average_checkpoints(const std::vector<Checkpoint>& checkpoints, const CheckpointSelector* selector) {
  std::vector<const Checkpoint*> chosen;
  for (const auto& c : checkpoints)
    if (!selector || !selector->validation_ssim || selector->validation_ssim(c) > selector->min_ssim)
      chosen.push_back(&c);
  if (chosen.size() < 2)
    throw ContractError("checkpoint averaging needs >= 2 checkpoints, " + std::to_string(chosen.size()) +
                        " selected");
  const Checkpoint& ref = *chosen.front();
  for (std::size_t k = 1; k < chosen.size(); ++k) {
    const Checkpoint& other = *chosen[k];
    std::vector<std::string> diff;
    std::size_t n = std::max(ref.records().size(), other.records().size());
    for (std::size_t i = 0; i < n; ++i) {
      const Record* a = i < ref.records().size() ? &ref.records()[i] : nullptr;
      const Record* b = i < other.records().size() ? &other.records()[i] : nullptr;
      if (a && b && a->name == b->name && a->shape() == b->shape()) continue;
      if (a) diff.push_back(a->name);
      if (b && (!a || b->name != a->name)) diff.push_back(b->name);
    }
    if (!diff.empty()) {
      std::string names;
      for (const auto& d : diff) names += (names.empty() ? "" : ", ") + d;
      throw ContractError("checkpoint manifests differ in: " + names);
    }
  }
  Checkpoint out;
  for (std::size_t i = 0; i < ref.records().size(); ++i) {
    const Record& r = ref.records()[i];
    Tensor<double> acc(r.shape());
    for (const Checkpoint* c : chosen) {
      const Tensor<double> v = c->records()[i].as<double>();
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += v[j];
    }
    for (auto& v : acc.data()) v /= double(chosen.size());
    if (r.dtype() == DType::kFloat32)
      out.add(r.name, acc.cast<float>());
    else
      out.add(r.name, std::move(acc));
  }
  return out;
}

Checkpoint average_checkpoints(const std::vector<fs::path>& paths, const CheckpointSelector* selector) {
  std::vector<Checkpoint> cks;
  for (const auto& p : paths) cks.push_back(load_checkpoint(p));
  return average_checkpoints(cks, selector);
}

#define STRM_INSTANTIATE_TRAIN(T)                                                                     \
  template class Adam<T>;                                                                             \
  template Var<T> vos_clip_loss(Model<T>&, const Graph<T>&, const std::vector<Image>&,                \
                                const std::vector<LabelMap>&, int, std::uint64_t, UpdateMode);        \
  template Var<T> prediction_clip_loss(Model<T>&, const Graph<T>&, const std::vector<Image>&,         \
                                       std::uint64_t, UpdateMode);

STRM_INSTANTIATE_TRAIN(float)
STRM_INSTANTIATE_TRAIN(double)

#undef STRM_INSTANTIATE_TRAIN

}  // namespace strm
