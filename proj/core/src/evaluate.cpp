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
#include <numeric>

#include "json.hpp"
#include "strm/errors.hpp"
#include "strm/harness.hpp"
#include "strm/ops.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace strm {

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

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

UpdateMode eval_mode(const RunConfig& cfg) {
  return cfg.deterministic_eval ? UpdateMode::kEval : UpdateMode::kTrain;
}

}  // namespace

SequenceMetrics score_vos(const SequenceSample& sample, const std::vector<LabelMap>& predicted, double boundary_tol) {
  if (predicted.size() != sample.length())
    throw ContractError("score_vos: " + std::to_string(predicted.size()) + " predictions for " +
                        std::to_string(sample.length()) + " frames of '" + sample.name + "'");
  const double tol = boundary_tol < 0 ? default_boundary_tolerance(sample.height(), sample.width()) : boundary_tol;
  SequenceMetrics m;
  m.name = sample.name;
  std::vector<double> obj_j, obj_f;
  std::vector<double> frame_j_sum(sample.length(), 0.0), frame_f_sum(sample.length(), 0.0);
  std::vector<std::size_t> annotated;
  for (std::size_t t = 1; t < sample.length(); ++t)
    if (sample.masks[t]) annotated.push_back(t);
  for (int o = 1; o <= sample.object_count; ++o) {
    std::vector<double> js, fs_;
    for (std::size_t t : annotated) {
      const BinaryMask gt = BinaryMask::from_labels(*sample.masks[t], o);
      const BinaryMask pr = BinaryMask::from_labels(predicted[t], o);
      const double j = metric_j(pr, gt), f = metric_f(pr, gt, tol);
      js.push_back(j);
      fs_.push_back(f);
      frame_j_sum[t] += j;
      frame_f_sum[t] += f;
    }
    obj_j.push_back(annotated.empty() ? 1.0 : mean(js));
    obj_f.push_back(annotated.empty() ? 1.0 : mean(fs_));
  }
  m.j = sample.object_count ? mean(obj_j) : 1.0;
  m.f = sample.object_count ? mean(obj_f) : 1.0;
  for (std::size_t t : annotated) {
    const double n = std::max(1, sample.object_count);
    m.frame_j.push_back(sample.object_count ? frame_j_sum[t] / n : 1.0);
    m.frame_f.push_back(sample.object_count ? frame_f_sum[t] / n : 1.0);
  }
  return m;
}

template <typename T>
std::vector<LabelMap> predict_masks(Model<T>& model, const RunConfig& cfg, const SequenceSample& sample,
                                    RolloutLog* log) {
  if (model.config().task != Task::kVos) throw ConfigError("predict_masks needs a VOS model");
  if (sample.masks.empty() || !sample.masks.front())
    throw IngestionError("sequence '" + sample.name + "' has no first-frame mask");
  const LabelMap& first = *sample.masks.front();
  const std::size_t H = sample.height(), W = sample.width(), N = sample.length();
  // Foreground probability per object and frame.
  std::vector<std::vector<Tensor<T>>> prob(static_cast<std::size_t>(sample.object_count));
  Graph<T> g;
  for (int o = 1; o <= sample.object_count; ++o) {
    if (first.count(o) == 0) continue;  // enters later: outside the one-shot protocol
    ModelState<T> state(model.config(), Rng::mix(cfg.seed, 0x0b1ec7 + std::uint64_t(o)), eval_mode(cfg));
    vos_init(model, state, g, image_var<T>(sample.frames[0]), object_mask_var<T>(first, o));
    RolloutSequence rs;
    rs.video = sample.object_count > 1 ? sample.name + "/" + std::to_string(o) : sample.name;
    rs.capacity = model.config().k_slots;
    auto& out = prob[std::size_t(o - 1)];
    out.resize(N);
    for (std::size_t t = 1; t < N; ++t) {
      rs.steps.push_back({t, state.bank.frame_indices()});
      VosStep<T> step = vos_step(model, state, g, image_var<T>(sample.frames[t]), t);
      out[t] = step.foreground.value();
    }
    rs.final_bank = state.bank.frame_indices();
    if (log) {
      log->final_banks.emplace_back(rs.video, snapshot_bank(state.bank));
      log->sequences.push_back(std::move(rs));
    }
  }
  std::vector<LabelMap> result;
  result.push_back(first);
  for (std::size_t t = 1; t < N; ++t) {
    LabelMap m(H, W);
    for (std::size_t i = 0; i < H * W; ++i) {
      int best = 0;
      T best_p = T(0.5);
      for (std::size_t o = 0; o < prob.size(); ++o) {
        if (prob[o].empty()) continue;
        if (prob[o][t][i] > best_p) best_p = prob[o][t][i], best = int(o) + 1;
      }
      m.labels[i] = best;
    }
    result.push_back(std::move(m));
  }
  return result;
}

template <typename T>
std::vector<Image> predict_frames(Model<T>& model, const RunConfig& cfg, const SequenceSample& sample,
                                  RolloutLog* log) {
  if (model.config().task != Task::kPrediction) throw ConfigError("predict_frames needs a prediction model");
  const std::size_t cf = model.config().clip_frames, N = sample.length();
  const std::size_t context = cfg.context_frames;
  if (context < cf || context >= N)
    throw ConfigError("eval.context_frames=" + std::to_string(context) + " must lie in [" + std::to_string(cf) +
                      ", " + std::to_string(N) + ") for '" + sample.name + "'");
  Graph<T> g;
  ModelState<T> state(model.config(), Rng::mix(cfg.seed, 0x0f7a3e), eval_mode(cfg));
  std::vector<Var<T>> inputs;
  for (std::size_t t = 0; t < context; ++t) inputs.push_back(image_var<T>(sample.frames[t]));
  RolloutSequence rs;
  rs.video = sample.name;
  rs.capacity = model.config().k_slots;
  std::vector<Image> out;
  for (std::size_t target = cf; target < N; ++target) {
    if (state.initialized()) rs.steps.push_back({target, state.bank.frame_indices()});
    std::vector<Var<T>> clip(inputs.begin() + long(target - cf), inputs.begin() + long(target));
    Var<T> pred = prediction_step(model, state, g, clip, target);
    if (target >= context) {
      out.push_back(pred.value().template cast<double>());
      inputs.push_back(pred);
    }
  }
  rs.final_bank = state.bank.frame_indices();
  if (log) {
    log->final_banks.emplace_back(rs.video, snapshot_bank(state.bank));
    log->sequences.push_back(std::move(rs));
  }
  return out;
}

namespace {

template <typename T>
EvalReport evaluate_impl(const RunConfig& cfg, const Checkpoint& checkpoint, const std::vector<SequenceSample>& data) {
  Model<T> model(cfg.model, Rng::mix(cfg.seed, 1));
  restore_parameters(model.parameters(), checkpoint);
  EvalReport report;
  report.task = cfg.model.task;
  report.config_hash = cfg.hash();
  report.seed = cfg.seed;
  for (const auto& sample : data) {
    if (cfg.model.task == Task::kVos) {
      report.sequences.push_back(score_vos(sample, predict_masks(model, cfg, sample, &report.rollout)));
    } else {
      const auto pred = predict_frames(model, cfg, sample, &report.rollout);
      const std::vector<Image> gt(sample.frames.begin() + long(cfg.context_frames), sample.frames.end());
      SequenceMetrics m;
      m.name = sample.name;
      const PredictionMetrics pm = metric_prediction(pred, gt);
      m.mse = pm.mse;
      m.mae = pm.mae;
      m.ssim = pm.ssim;
      m.psnr = pm.psnr;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        m.frame_mse.push_back(frame_mse(pred[i], gt[i]));
        m.frame_ssim.push_back(frame_ssim(pred[i], gt[i]));
      }
      report.sequences.push_back(std::move(m));
    }
  }
  SequenceMetrics& a = report.aggregate;
  a.name = "mean";
  const double n = double(std::max<std::size_t>(1, report.sequences.size()));
  for (const auto& s : report.sequences) {
    a.j += s.j / n;
    a.f += s.f / n;
    a.mse += s.mse / n;
    a.mae += s.mae / n;
    a.ssim += s.ssim / n;
    a.psnr += s.psnr / n;
  }
  return report;
}

}  // namespace

EvalReport evaluate(const RunConfig& cfg, const Checkpoint& checkpoint, const std::vector<SequenceSample>& data) {
  cfg.validate();
  if (data.empty()) throw ContractError("evaluation needs at least one sequence");
  return cfg.precision == 64 ? evaluate_impl<double>(cfg, checkpoint, data)
                             : evaluate_impl<float>(cfg, checkpoint, data);
}

namespace {
json metrics_json(Task task, const SequenceMetrics& m) {
  json j;
  j["sequence"] = m.name;
  if (task == Task::kVos) {
    j["J"] = m.j;
    j["F"] = m.f;
    j["JF"] = 0.5 * (m.j + m.f);
    if (!m.frame_j.empty()) {
      j["frame_J"] = m.frame_j;
      j["frame_F"] = m.frame_f;
    }
  } else {
    j["MSE"] = m.mse;
    j["MAE"] = m.mae;
    j["SSIM"] = m.ssim;
    j["PSNR"] = m.psnr;
    if (!m.frame_mse.empty()) {
      j["frame_MSE"] = m.frame_mse;
      j["frame_SSIM"] = m.frame_ssim;
    }
  }
  return j;
}
}  // namespace

void write_report(const EvalReport& report, const fs::path& csv, const fs::path& json_path) {
  for (const auto& p : {csv, json_path})
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream c(csv);
  if (!c) throw IoError("cannot write " + csv.string());
  char buf[256];
  auto row = [&](const SequenceMetrics& m) {
    if (report.task == Task::kVos)
      std::snprintf(buf, sizeof buf, "%s,%.9f,%.9f,%.9f,%s,%llu\n", m.name.c_str(), m.j, m.f, 0.5 * (m.j + m.f),
                    report.config_hash.c_str(), static_cast<unsigned long long>(report.seed));
    else
      std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9f,%.6f,%s,%llu\n", m.name.c_str(), m.mse, m.mae, m.ssim, m.psnr,
                    report.config_hash.c_str(), static_cast<unsigned long long>(report.seed));
    c << buf;
  };
  c << (report.task == Task::kVos ? "sequence,J,F,JF,config_hash,seed\n"
                                  : "sequence,MSE,MAE,SSIM,PSNR,config_hash,seed\n");
  for (const auto& s : report.sequences) row(s);
  row(report.aggregate);

  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["task"] = task_name(report.task);
  j["config_hash"] = report.config_hash;
  j["seed"] = report.seed;
  j["post_processing"] = "none";
  j["sequences"] = json::array();
  for (const auto& s : report.sequences) j["sequences"].push_back(metrics_json(report.task, s));
  j["aggregate"] = metrics_json(report.task, report.aggregate);
  std::ofstream o(json_path);
  if (!o) throw IoError("cannot write " + json_path.string());
  o << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

std::string rollout_to_json(const RolloutLog& log) {
  json j;
  j["schema_version"] = 1;
  j["sequences"] = json::array();
  for (const auto& s : log.sequences) {
    json js;
    js["video"] = s.video;
    js["capacity"] = s.capacity;
    js["steps"] = json::array();
    for (const auto& st : s.steps) js["steps"].push_back({{"query", st.query_frame}, {"bank", st.bank}});
    js["final_bank"] = s.final_bank;
    j["sequences"].push_back(std::move(js));
  }
  return j.dump(1);
}

RolloutLog rollout_from_json(const std::string& text) {
  RolloutLog log;
  try {
    const json j = json::parse(text);
    for (const auto& js : j.at("sequences")) {
      RolloutSequence s;
      s.video = js.at("video").get<std::string>();
      s.capacity = js.value("capacity", std::size_t(0));
      for (const auto& st : js.at("steps"))
        s.steps.push_back({st.at("query").get<std::size_t>(), st.at("bank").get<std::vector<std::size_t>>()});
      if (js.contains("final_bank")) s.final_bank = js.at("final_bank").get<std::vector<std::size_t>>();
      log.sequences.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw IngestionError(std::string("malformed rollout log: ") + e.what());
  }
  return log;
}

std::map<std::size_t, double> MemoryHistogram::normalized() const {
  std::map<std::size_t, double> out;
  if (total == 0) return out;
  for (const auto& [t, c] : counts) out[t] = double(c) / double(total);
  return out;
}

double MemoryHistogram::mass_beyond(std::size_t distance) const {
  double m = 0;
  for (const auto& [t, v] : normalized())
    if (t > distance) m += v;
  return m;
}

MemoryHistogram analyze_memory(const RolloutLog& log) {
  std::size_t steps = 0;
  for (const auto& s : log.sequences) steps += s.steps.size();
  if (steps == 0) throw ContractError("analyze_memory: rollout log holds no steps");
  MemoryHistogram h;
  for (const auto& s : log.sequences) {
    h.capacity = std::max(h.capacity, s.capacity);
    for (const auto& st : s.steps) {
      for (std::size_t i = 0; i < st.bank.size(); ++i) {
        const std::size_t frame = st.bank[i];
        if (frame >= st.query_frame)
          throw ContractError("analyze_memory: slot frame " + std::to_string(frame) + " not before query " +
                              std::to_string(st.query_frame) + " in '" + s.video + "'");
        if (i == 0) {
          ++h.excluded_first;
        } else if (frame + 1 == st.query_frame) {
          ++h.excluded_previous;
        } else {
          ++h.counts[st.query_frame - frame];
          ++h.total;
        }
      }
    }
    if (!s.final_bank.empty())
      h.final_banks.emplace_back(s.video, s.final_bank);
    else if (!s.steps.empty())
      h.final_banks.emplace_back(s.video, s.steps.back().bank);
  }
  return h;
}

std::string histogram_to_json(const MemoryHistogram& h) {
  json j;
  j["schema_version"] = 1;
  j["capacity"] = h.capacity;
  j["total"] = h.total;
  j["excluded"] = {{"first_frame", h.excluded_first}, {"previous_frame", h.excluded_previous}};
  json counts = json::object(), norm = json::object();
  for (const auto& [t, c] : h.counts) counts[std::to_string(t)] = c;
  for (const auto& [t, v] : h.normalized()) norm[std::to_string(t)] = v;
  j["counts"] = counts;
  j["normalized"] = norm;
  j["final_banks"] = json::array();
  for (const auto& [video, bank] : h.final_banks) j["final_banks"].push_back({{"video", video}, {"bank", bank}});
  return j.dump(2);
}

// ---------------------------------------------------------------------------

std::vector<SweepRow> sweep_slots(const RunConfig& base, const std::vector<std::size_t>& ks) {
  const auto train_data = load_dataset(base, false);
  const auto eval_data = load_dataset(base, true);
  std::vector<SweepRow> rows;
  for (std::size_t k : ks) {
    RunConfig cfg = base;
    cfg.model.k_slots = k;
    cfg.checkpoint_dir.clear();
    const TrainResult tr = train(cfg, train_data);
    const EvalReport r = evaluate(cfg, tr.checkpoint, eval_data);
    rows.push_back({k, r.aggregate.j, r.aggregate.f});
  }
  return rows;
}

#define STRM_INSTANTIATE_EVAL(T)                                                                             \
  template std::vector<LabelMap> predict_masks(Model<T>&, const RunConfig&, const SequenceSample&, RolloutLog*); \
  template std::vector<Image> predict_frames(Model<T>&, const RunConfig&, const SequenceSample&, RolloutLog*);

STRM_INSTANTIATE_EVAL(float)
STRM_INSTANTIATE_EVAL(double)

#undef STRM_INSTANTIATE_EVAL

}  // namespace strm
