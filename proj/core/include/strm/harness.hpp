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

#ifndef STRM_HARNESS_HPP_
#define STRM_HARNESS_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "strm/bank_snapshot.hpp"
#include "strm/checkpoint.hpp"
#include "strm/models.hpp"
#include "strm/tasks.hpp"

namespace strm {

// ---------------------------------------------------------------------------
// Configuration

// Flat "section.key" -> value store. Later sources override earlier ones:
// file, then STRM_* environment variables, then explicit overrides.
class ConfigMap {
 public:
  void set(const std::string& key, const std::string& value);
  std::optional<std::string> get(const std::string& key) const;
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const noexcept { return values_; }

  // Lines of `key = value`, `# comment`, and optional `[section]` headers
  // that prefix subsequent keys.
  static ConfigMap parse(std::string_view text, const std::string& origin = "<text>");
  static ConfigMap load(const std::filesystem::path& path);

  // STRM_MODEL_K_SLOTS=6 -> model.k_slots=6. The first underscore after the
  // prefix separates section from key; names without one are top-level.
  void apply_environment(const std::vector<std::pair<std::string, std::string>>& env);
  void apply_process_environment();
  // "section.key=value".
  void apply_override(const std::string& assignment);

 private:
  std::map<std::string, std::string> values_;
};

enum class Schedule { kConstant, kCosine, kTwoPhase };

Schedule parse_schedule(std::string_view name);
std::string_view schedule_name(Schedule s);

struct RunConfig {
  ModelConfig model = ModelConfig::vos_defaults();
  std::uint64_t seed = 0;
  int precision = 32;

  // Optimisation. kTwoPhase runs `lr` constant for the first
  // `finetune_start` fraction of steps, then cosine from finetune_lr to lr_min.
  double lr = 1e-4;
  Schedule schedule = Schedule::kConstant;
  double finetune_lr = 1e-5;
  double lr_min = 1e-7;
  double finetune_start = 0.5;
  std::size_t steps = 300;
  std::size_t clip_length = 10;
  std::size_t checkpoint_every = 0;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  bool random_clips = true;
  // Optional first phase on short clips at constant `lr`, with its own
  // sampler and a fresh optimizer, before the `steps` main phase.
  std::size_t pretrain_steps = 0;
  std::size_t pretrain_clip_length = 3;
  std::string init_checkpoint;  // warm start; parameters it lacks keep their fresh init

  // Data.
  std::size_t train_sequences = 8;
  std::size_t eval_sequences = 5;
  SyntheticConfig synthetic;
  std::string data_path;  // empty: synthetic data

  // Evaluation.
  bool deterministic_eval = true;
  std::size_t context_frames = 10;  // prediction: ground-truth frames before the free-running horizon

  std::string checkpoint_dir;
  std::string output_dir;

  static RunConfig from_map(const ConfigMap& map);
  ConfigMap to_map() const;
  void validate() const;
  // FNV-1a over the canonical key=value listing, as 16 hex digits.
  std::string hash() const;
};

// Reads config file + environment + overrides into a validated RunConfig.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::string>& overrides, bool use_environment = true);

std::uint64_t fnv1a(std::string_view bytes);

// Synthetic split: training sequences use seeds derived from (seed, "train"),
// evaluation sequences from (seed, "eval"), so the two never overlap.
std::vector<SequenceSample> synthetic_split(const RunConfig& cfg, bool evaluation);
// Dataset from cfg.data_path, or the synthetic split when it is empty.
std::vector<SequenceSample> load_dataset(const RunConfig& cfg, bool evaluation);

// ---------------------------------------------------------------------------
// Training

template <typename T>
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ParameterSet<T>& params, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

double learning_rate(const RunConfig& cfg, std::size_t step);

struct TrainLog {
  std::size_t pretrain_steps = 0;  // leading entries of loss/lr from the first phase
  std::vector<double> loss;
  std::vector<double> lr;
  std::vector<std::filesystem::path> checkpoints;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

// Adam over clips sampled from `data`. VOS: per-pixel cross entropy on every
// frame after the first, one object per clip. Prediction: L1 + L2 on every
// predicted frame with ground-truth inputs.
TrainResult train(const RunConfig& cfg, const std::vector<SequenceSample>& data,
                  const StepCallback& on_step = {});
// Same, starting from `init` instead of cfg.init_checkpoint.
TrainResult train(const RunConfig& cfg, const std::vector<SequenceSample>& data, const Checkpoint& init,
                  const StepCallback& on_step = {});

// Loss of one clip; exposed for the gradient suite and tests.
template <typename T>
Var<T> vos_clip_loss(Model<T>& model, const Graph<T>& g, const std::vector<Image>& frames,
                     const std::vector<LabelMap>& masks, int object, std::uint64_t noise_seed,
                     UpdateMode mode);
template <typename T>
Var<T> prediction_clip_loss(Model<T>& model, const Graph<T>& g, const std::vector<Image>& frames,
                            std::uint64_t noise_seed, UpdateMode mode);

void write_loss_csv(const std::filesystem::path& path, const TrainLog& log);

struct CheckpointSelector {
  double min_ssim = 0.0;
  std::function<double(const Checkpoint&)> validation_ssim;
};

// Arithmetic mean per parameter. With a selector, only checkpoints whose
// validation SSIM exceeds min_ssim take part.
Checkpoint average_checkpoints(const std::vector<Checkpoint>& checkpoints,
                               const CheckpointSelector* selector = nullptr);
Checkpoint average_checkpoints(const std::vector<std::filesystem::path>& paths,
                               const CheckpointSelector* selector = nullptr);

// ---------------------------------------------------------------------------
// Rollouts and evaluation

struct RolloutStep {
  std::size_t query_frame = 0;
  std::vector<std::size_t> bank;  // frame index per slot; slot 0 is pinned
};

struct RolloutSequence {
  std::string video;
  std::size_t capacity = 0;
  std::vector<RolloutStep> steps;
  std::vector<std::size_t> final_bank;  // after the last update
};

struct RolloutLog {
  std::vector<RolloutSequence> sequences;
  // Bank contents after the last step of each sequence; not part of the JSON.
  std::vector<std::pair<std::string, BankSnapshot>> final_banks;
};

std::string rollout_to_json(const RolloutLog& log);
RolloutLog rollout_from_json(const std::string& text);

struct SequenceMetrics {
  std::string name;
  // VOS
  double j = 0, f = 0;
  std::vector<double> frame_j, frame_f;
  // Prediction
  double mse = 0, mae = 0, ssim = 0, psnr = 0;
  std::vector<double> frame_mse, frame_ssim;
};

struct EvalReport {
  Task task = Task::kVos;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<SequenceMetrics> sequences;
  SequenceMetrics aggregate;
  RolloutLog rollout;
};

// J and F of predicted label maps against every annotated frame after the
// first, averaged per object and then over objects.
SequenceMetrics score_vos(const SequenceSample& sample, const std::vector<LabelMap>& predicted,
                          double boundary_tol = -1);

template <typename T>
std::vector<LabelMap> predict_masks(Model<T>& model, const RunConfig& cfg, const SequenceSample& sample,
                                    RolloutLog* log = nullptr);
// Predicted frames for indices context_frames .. T-1; the model sees ground
// truth up to context_frames - 1 and its own outputs afterwards.
template <typename T>
std::vector<Image> predict_frames(Model<T>& model, const RunConfig& cfg, const SequenceSample& sample,
                                  RolloutLog* log = nullptr);

// Deterministic eval-mode rollout of every sequence; restores `checkpoint`
// into a freshly built model (ManifestError if incompatible).
EvalReport evaluate(const RunConfig& cfg, const Checkpoint& checkpoint,
                    const std::vector<SequenceSample>& data);

// CSV: header, one row per sequence, one "mean" row. JSON: schema-versioned
// aggregate with config hash and seed.
void write_report(const EvalReport& report, const std::filesystem::path& csv,
                  const std::filesystem::path& json);
inline constexpr int kReportSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Memory analysis

struct MemoryHistogram {
  std::map<std::size_t, std::size_t> counts;  // distance t -> raw count
  std::size_t total = 0;
  std::size_t capacity = 0;
  std::size_t excluded_first = 0;
  std::size_t excluded_previous = 0;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> final_banks;

  std::map<std::size_t, double> normalized() const;
  double mass_beyond(std::size_t distance) const;  // normalized mass at t > distance
};

// Distances query_frame - slot_frame over every step, skipping the pinned
// slot and the previous frame.
MemoryHistogram analyze_memory(const RolloutLog& log);
std::string histogram_to_json(const MemoryHistogram& h);

// ---------------------------------------------------------------------------
// Complexity benchmark

struct BenchConfig {
  std::size_t k_slots = 6;
  std::size_t gamma = 5;
  std::size_t channels = 32;
  std::size_t height = 8, width = 8;
  std::size_t key_channels = 4, value_channels = 16;
  std::size_t repetitions = 5;
  std::size_t measured_steps = 20;  // trailing steps whose read latency is timed
  std::uint64_t seed = 0;
};

struct BenchPoint {
  std::string variant;  // "stremn" or "linear"
  std::size_t length = 0;
  double read_latency = 0;    // seconds per step, median
  double update_latency = 0;  // seconds per step, median
  std::size_t peak_slots = 0;
  std::size_t peak_bytes = 0;
};

struct BenchResult {
  BenchConfig config;
  std::vector<BenchPoint> points;
  const BenchPoint& at(const std::string& variant, std::size_t length) const;
};

BenchResult bench_complexity(const BenchConfig& cfg, const std::vector<std::size_t>& lengths);
std::string bench_to_json(const BenchResult& r);

// ---------------------------------------------------------------------------
// Gradient suite

struct GradCaseResult {
  std::string name;
  double max_rel_error = 0;
  bool finite = true;
  bool passed = false;
};

// Finite-difference checks of every differentiable operation and of the
// end-to-end soft-path pipeline, in double precision.
std::vector<GradCaseResult> run_gradient_suite(std::uint64_t seed = 0, double tolerance = 1e-5);

// ---------------------------------------------------------------------------
// Slot-count sweep

struct SweepRow {
  std::size_t k_slots = 0;
  double j = 0, f = 0;
};

// Trains and evaluates the learned policy for each K on the synthetic benchmark.
std::vector<SweepRow> sweep_slots(const RunConfig& base, const std::vector<std::size_t>& ks);

}  // namespace strm

#endif  // STRM_HARNESS_HPP_
