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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "strm/errors.hpp"
#include "strm/harness.hpp"
#include "strm/random.hpp"

using namespace strm;
namespace fs = std::filesystem;

namespace {

// A VOS run small enough to train for a few steps in well under a second.
RunConfig tiny_vos() {
  RunConfig c;
  c.model.base_width = 8;
  c.model.encoder_blocks = 2;
  c.model.decoder_blocks = 2;
  c.model.downsample = 4;
  c.model.key_channels = 4;
  c.model.value_channels = 8;
  c.synthetic.height = c.synthetic.width = 16;
  c.synthetic.length = 12;
  c.synthetic.objects = 1;
  c.synthetic.appearance_switches = {6};
  c.synthetic.occlusions = {{3, 5}};
  c.synthetic.min_radius = 2;
  c.synthetic.max_radius = 4;
  c.clip_length = 4;
  c.steps = 3;
  c.lr = 1e-3;
  c.train_sequences = 2;
  c.eval_sequences = 2;
  return c;
}

Checkpoint fresh_checkpoint(const RunConfig& cfg) {
  Model<float> m(cfg.model, 0);
  return capture_parameters(m.parameters());
}

Checkpoint scalar_checkpoint(double a, double b) {
  Checkpoint c;
  c.add("w", Tensor<double>({2}, a));
  c.add("b", Tensor<double>({1}, b));
  return c;
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("strm_harness_" + std::to_string(Rng(std::random_device{}()).bits()))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, ParsesSectionsAndComments) {
  const auto m = ConfigMap::parse("# run\nseed = 4\n[model]\nk_slots = 8   \n\n[train]\nlr=0.01\n");
  EXPECT_EQ(m.get("seed"), "4");
  EXPECT_EQ(m.get("model.k_slots"), "8");
  EXPECT_EQ(m.get("train.lr"), "0.01");
  const auto cfg = RunConfig::from_map(m);
  EXPECT_EQ(cfg.seed, 4u);
  EXPECT_EQ(cfg.model.k_slots, 8u);
  EXPECT_DOUBLE_EQ(cfg.lr, 0.01);
}

TEST(Config, LaterSourcesWin) {
  auto m = ConfigMap::parse("model.k_slots = 8\ntrain.steps = 10\n");
  m.apply_environment({{"STRM_MODEL_K_SLOTS", "7"}, {"STRM_TRAIN_STEPS", "20"}, {"HOME", "/root"}});
  m.apply_override("train.steps=30");
  const auto cfg = RunConfig::from_map(m);
  EXPECT_EQ(cfg.model.k_slots, 7u);
  EXPECT_EQ(cfg.steps, 30u);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(RunConfig::from_map(ConfigMap::parse("model.slots = 6\n")), ConfigError);
  EXPECT_THROW(RunConfig::from_map(ConfigMap::parse("train.steps = -3\n")), ConfigError);
  EXPECT_THROW(RunConfig::from_map(ConfigMap::parse("memory.policy = lru\n")), ConfigError);
  EXPECT_THROW(ConfigMap::parse("[model\n"), ConfigError);
  EXPECT_THROW(ConfigMap::parse("just words\n"), ConfigError);
  ConfigMap m;
  EXPECT_THROW(m.apply_override("novalue"), ConfigError);
  RunConfig c;
  c.model.k_slots = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.precision = 16;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(resolve_config(fs::path("/nonexistent/strm.cfg"), {}, false), IoError);
}

TEST(Config, RoundTripPreservesHash) {
  RunConfig c = tiny_vos();
  c.model.policy = Policy::kRandomSelect;
  c.schedule = Schedule::kTwoPhase;
  c.pretrain_steps = 5;
  const RunConfig back = RunConfig::from_map(c.to_map());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(back.hash().size(), 16u);
  RunConfig d = c;
  d.seed = 1;
  EXPECT_NE(d.hash(), c.hash());
}

TEST(Config, TaskSelectsArchitectureDefaults) {
  const auto cfg = RunConfig::from_map(ConfigMap::parse("task = prediction\n"));
  EXPECT_EQ(cfg.model.task, Task::kPrediction);
  EXPECT_EQ(cfg.model.k_slots, 5u);
  EXPECT_EQ(cfg.model.clip_frames, 3u);
}

TEST(Config, SyntheticSplitsDoNotOverlap) {
  RunConfig c = tiny_vos();
  const auto tr = synthetic_split(c, false), ev = synthetic_split(c, true);
  ASSERT_EQ(tr.size(), 2u);
  ASSERT_EQ(ev.size(), 2u);
  for (const auto& a : tr)
    for (const auto& b : ev) EXPECT_NE(a.seed, b.seed);
}

// ---------------------------------------------------------------------------
// Optimisation

TEST(Schedule, TwoPhase) {
  RunConfig c;
  c.schedule = Schedule::kTwoPhase;
  c.lr = 1e-3;
  c.finetune_lr = 1e-4;
  c.lr_min = 1e-6;
  c.finetune_start = 0.5;
  c.steps = 100;
  EXPECT_DOUBLE_EQ(learning_rate(c, 0), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate(c, 49), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate(c, 50), 1e-4);
  EXPECT_NEAR(learning_rate(c, 99), 1e-6, 1e-15);
  for (std::size_t s = 51; s < 100; ++s) EXPECT_LE(learning_rate(c, s), learning_rate(c, s - 1));
  c.schedule = Schedule::kConstant;
  EXPECT_DOUBLE_EQ(learning_rate(c, 77), 1e-3);
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  ParameterSet<double> ps;
  Parameter<double> p(Tensor<double>({3}, 1.0));
  ps.add("p", p);
  p.grad[0] = 4.0;
  p.grad[1] = -0.5;
  p.grad[2] = 0.0;
  Adam<double> adam;
  adam.step(ps, 0.1);
  EXPECT_NEAR(p.value[0], 0.9, 1e-6);
  EXPECT_NEAR(p.value[1], 1.1, 1e-6);
  EXPECT_DOUBLE_EQ(p.value[2], 1.0);
  EXPECT_EQ(adam.steps(), 1u);
}

// ---------------------------------------------------------------------------
// Checkpoint averaging

TEST(Averaging, ArithmeticMean) {
  const Checkpoint avg = average_checkpoints({scalar_checkpoint(1, 10), scalar_checkpoint(3, 20)});
  EXPECT_EQ(avg.at("w").as<double>(), Tensor<double>({2}, 2.0));
  EXPECT_EQ(avg.at("b").as<double>(), Tensor<double>({1}, 15.0));
  const Checkpoint c = scalar_checkpoint(0.25, -7);
  EXPECT_EQ(average_checkpoints({c, c, c}), c);
}

TEST(Averaging, SelectorAndErrors) {
  const std::vector<Checkpoint> cks{scalar_checkpoint(1, 0), scalar_checkpoint(3, 0), scalar_checkpoint(100, 0)};
  CheckpointSelector sel;
  sel.min_ssim = 0.5;
  sel.validation_ssim = [](const Checkpoint& c) { return c.at("w").as<double>()[0] < 50 ? 0.9 : 0.1; };
  EXPECT_EQ(average_checkpoints(cks, &sel).at("w").as<double>()[0], 2.0);
  Checkpoint odd;
  odd.add("w", Tensor<double>({3}, 1.0));
  odd.add("b", Tensor<double>({1}, 1.0));
  EXPECT_THROW(average_checkpoints({scalar_checkpoint(1, 0), odd}), ContractError);
  EXPECT_THROW(average_checkpoints({scalar_checkpoint(1, 0)}), ContractError);
}

// ---------------------------------------------------------------------------
// Training

TEST(Train, IdenticalSeedsGiveIdenticalLosses) {
  const RunConfig c = tiny_vos();
  const auto data = load_dataset(c, false);
  const auto a = train(c, data), b = train(c, data);
  ASSERT_EQ(a.log.loss.size(), 3u);
  EXPECT_EQ(a.log.loss, b.log.loss);
  EXPECT_EQ(a.checkpoint, b.checkpoint);
  RunConfig d = c;
  d.seed = 1;
  EXPECT_NE(train(d, data).log.loss, a.log.loss);
}

TEST(Train, PredictionTaskRuns) {
  RunConfig c = tiny_vos();
  c.model = ModelConfig::prediction_defaults();
  c.model.base_width = 8;
  c.model.encoder_blocks = 2;
  c.model.decoder_blocks = 2;
  c.model.downsample = 4;
  c.clip_length = 5;
  c.context_frames = 4;
  const auto r = train(c, load_dataset(c, false));
  ASSERT_EQ(r.log.loss.size(), 3u);
  for (double l : r.log.loss) EXPECT_TRUE(std::isfinite(l));
}

TEST(Train, PretrainingPhaseThenMainPhase) {
  TempDir dir;
  RunConfig c = tiny_vos();
  c.pretrain_steps = 4;
  c.pretrain_clip_length = 2;
  c.steps = 4;
  c.checkpoint_every = 2;
  c.checkpoint_dir = dir.path().string();
  std::vector<std::size_t> seen;
  const auto r = train(c, load_dataset(c, false), [&](std::size_t s, double) { seen.push_back(s); });
  EXPECT_EQ(r.log.pretrain_steps, 4u);
  EXPECT_EQ(r.log.loss.size(), 8u);
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
  for (const char* f : {"pretrain.strm", "final.strm"}) EXPECT_TRUE(fs::exists(dir.path() / f)) << f;
  EXPECT_EQ(r.log.checkpoints.size(), 4u);  // pretrain, step 2, step 4, final
  EXPECT_EQ(load_checkpoint(dir.path() / "final.strm"), r.checkpoint);
}

TEST(Train, WarmStartKeepsFreshParametersItLacks) {
  RunConfig c = tiny_vos();
  Checkpoint init = fresh_checkpoint(c);
  for (auto& rec : init.records()) std::get<Tensor<float>>(rec.tensor).fill(0.125f);
  Model<float> m(c.model, 3);
  const Checkpoint before = capture_parameters(m.parameters());
  Checkpoint partial;
  partial.add(init.records()[0].name, std::get<Tensor<float>>(init.records()[0].tensor));
  warm_start_parameters(m.parameters(), partial);
  const Checkpoint after = capture_parameters(m.parameters());
  const auto first = after.records()[0].as<float>();
  for (float v : first.data()) EXPECT_EQ(v, 0.125f);
  for (std::size_t i = 1; i < after.records().size(); ++i)
    EXPECT_EQ(after.records()[i].as<float>(), before.records()[i].as<float>());
  Checkpoint bad;
  bad.add("no.such.parameter", Tensor<float>({1}));
  EXPECT_THROW(warm_start_parameters(m.parameters(), bad), ManifestError);
}

TEST(Train, NonFiniteLossIsReported) {
  RunConfig c = tiny_vos();
  Checkpoint init = fresh_checkpoint(c);
  std::get<Tensor<float>>(init.records()[0].tensor).fill(std::numeric_limits<float>::quiet_NaN());
  try {
    train(c, load_dataset(c, false), init);
    FAIL() << "expected a training error";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsShortSequences) {
  RunConfig c = tiny_vos();
  c.clip_length = 20;
  EXPECT_THROW(train(c, load_dataset(c, false)), ContractError);
  EXPECT_THROW(train(c, {}), ContractError);
}

// ---------------------------------------------------------------------------
// Evaluation

TEST(Evaluate, GroundTruthScoresPerfectly) {
  const auto s = gen_moving_shapes(SyntheticConfig{}, 1);
  std::vector<LabelMap> gt;
  for (const auto& m : s.masks) gt.push_back(*m);
  const auto m = score_vos(s, gt);
  EXPECT_DOUBLE_EQ(m.j, 1.0);
  EXPECT_DOUBLE_EQ(m.f, 1.0);
  EXPECT_EQ(m.frame_j.size(), s.length() - 1);
  std::vector<LabelMap> empty(s.length(), LabelMap(64, 64));
  EXPECT_DOUBLE_EQ(score_vos(s, empty).j, 0.0);
  gt.pop_back();
  EXPECT_THROW(score_vos(s, gt), ContractError);
}

TEST(Evaluate, DeterministicReportAndRollout) {
  RunConfig c = tiny_vos();
  const auto data = load_dataset(c, true);
  const Checkpoint ck = fresh_checkpoint(c);
  const auto a = evaluate(c, ck, data), b = evaluate(c, ck, data);
  ASSERT_EQ(a.sequences.size(), 2u);
  EXPECT_EQ(a.aggregate.j, b.aggregate.j);
  EXPECT_EQ(rollout_to_json(a.rollout), rollout_to_json(b.rollout));
  for (const auto& s : a.sequences) {
    EXPECT_GE(s.j, 0.0);
    EXPECT_LE(s.j, 1.0);
  }
  ASSERT_EQ(a.rollout.sequences.size(), 2u);
  EXPECT_EQ(a.rollout.sequences[0].steps.size(), c.synthetic.length - 1);
  EXPECT_EQ(a.rollout.final_banks.size(), 2u);
}

TEST(Evaluate, RejectsIncompatibleCheckpoint) {
  RunConfig c = tiny_vos();
  RunConfig wide = c;
  wide.model.base_width = 16;
  EXPECT_THROW(evaluate(c, fresh_checkpoint(wide), load_dataset(c, true)), ManifestError);
}

TEST(Evaluate, WritesReport) {
  TempDir dir;
  RunConfig c = tiny_vos();
  const auto r = evaluate(c, fresh_checkpoint(c), load_dataset(c, true));
  write_report(r, dir.path() / "r.csv", dir.path() / "r.json");
  std::istringstream csv(slurp(dir.path() / "r.csv"));
  std::vector<std::string> lines;
  for (std::string l; std::getline(csv, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);  // header, two sequences, mean
  EXPECT_EQ(lines.back().rfind("mean,", 0), 0u);
  const std::string json = slurp(dir.path() / "r.json");
  EXPECT_NE(json.find("\"schema_version\""), std::string::npos);
  EXPECT_NE(json.find(r.config_hash), std::string::npos);
}

TEST(Rollout, JsonRoundTrip) {
  RolloutLog log;
  log.sequences.push_back({"v", 6, {{1, {0}}, {2, {0, 1}}}, {0, 1, 2}});
  const RolloutLog back = rollout_from_json(rollout_to_json(log));
  ASSERT_EQ(back.sequences.size(), 1u);
  EXPECT_EQ(back.sequences[0].video, "v");
  EXPECT_EQ(back.sequences[0].capacity, 6u);
  EXPECT_EQ(back.sequences[0].steps[1].bank, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(back.sequences[0].final_bank, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_THROW(rollout_from_json("{not json"), IngestionError);
}

// ---------------------------------------------------------------------------
// Memory analysis

TEST(Analysis, CarouselArithmetic) {
  RolloutLog log;
  log.sequences.push_back({"carousel", 6, {{68, {0, 17, 18, 29, 32, 67}}}, {}});
  const auto h = analyze_memory(log);
  EXPECT_EQ(h.total, 4u);
  EXPECT_EQ(h.excluded_first, 1u);
  EXPECT_EQ(h.excluded_previous, 1u);
  const std::map<std::size_t, double> expected{{36, 0.25}, {39, 0.25}, {50, 0.25}, {51, 0.25}};
  EXPECT_EQ(h.normalized(), expected);
  EXPECT_DOUBLE_EQ(h.mass_beyond(6), 1.0);
  EXPECT_DOUBLE_EQ(h.mass_beyond(50), 0.25);
}

TEST(Analysis, QueuePolicyKeepsOnlyRecentFrames) {
  RunConfig c = tiny_vos();
  c.model.k_slots = 6;
  c.model.policy = Policy::kOldest;
  const auto r = evaluate(c, fresh_checkpoint(c), load_dataset(c, true));
  const auto h = analyze_memory(r.rollout);
  EXPECT_GT(h.total, 0u);
  for (const auto& [d, n] : h.counts) {
    EXPECT_GE(d, 2u);
    EXPECT_LE(d, 5u);
  }
  EXPECT_EQ(h.mass_beyond(6), 0.0);
  // Final bank: first frame plus the last five.
  EXPECT_EQ(h.final_banks[0].second, (std::vector<std::size_t>{0, 7, 8, 9, 10, 11}));
}

TEST(Analysis, ErrorsAndJson) {
  EXPECT_THROW(analyze_memory(RolloutLog{}), ContractError);
  RolloutLog bad;
  bad.sequences.push_back({"v", 6, {{3, {0, 4}}}, {}});
  EXPECT_THROW(analyze_memory(bad), ContractError);
  RolloutLog ok;
  ok.sequences.push_back({"v", 6, {{9, {0, 2, 8}}}, {}});
  const std::string j = histogram_to_json(analyze_memory(ok));
  EXPECT_NE(j.find("\"7\""), std::string::npos);
}

// ---------------------------------------------------------------------------
// Gradient suite and slot sweep

TEST(GradientSuite, AllCasesPass) {
  const auto results = run_gradient_suite(0);
  ASSERT_FALSE(results.empty());
  for (const auto& r : results) {
    EXPECT_TRUE(r.finite) << r.name;
    EXPECT_TRUE(r.passed) << r.name << " " << r.max_rel_error;
  }
}

TEST(Sweep, OneRowPerSlotCount) {
  RunConfig c = tiny_vos();
  c.steps = 1;
  c.eval_sequences = 1;
  const auto rows = sweep_slots(c, {3, 5});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].k_slots, 3u);
  EXPECT_EQ(rows[1].k_slots, 5u);
}
