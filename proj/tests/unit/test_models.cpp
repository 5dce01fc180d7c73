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

#include "strm/errors.hpp"
#include "strm/gradcheck.hpp"
#include "strm/harness.hpp"
#include "strm/models.hpp"
#include "strm/ops.hpp"

using namespace strm;

namespace {

Tensor<double> random_image(Rng& rng, Shape s) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.data()) v = rng.uniform();
  return t;
}

Var<double> image(Rng& rng, std::size_t c = 3, std::size_t h = 16, std::size_t w = 16) {
  return constant(random_image(rng, {c, h, w}));
}

// Small VOS model: two blocks, s = 4, 16x16 frames.
ModelConfig small_vos(std::size_t k = 3) {
  ModelConfig c;
  c.base_width = 8;
  c.encoder_blocks = 2;
  c.decoder_blocks = 2;
  c.downsample = 4;
  c.k_slots = k;
  return c;
}

ModelConfig small_prediction() {
  ModelConfig c = small_vos();
  c.task = Task::kPrediction;
  return c;
}

Var<double> disk_mask(std::size_t h, std::size_t w, double cy, double cx, double r) {
  Tensor<double> m({1, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      m.at(0, y, x) = (double(y) - cy) * (double(y) - cy) + (double(x) - cx) * (double(x) - cx) <= r * r;
  return constant(m);
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST(Encoder, DefaultQueryShape) {
  Model<float> model(ModelConfig::vos_defaults(), 0);
  Graph<float> g;
  const auto x = model.encode_query(g, constant(Tensor<float>({3, 64, 64}, 0.5f)));
  EXPECT_EQ(x.shape(), (Shape{32, 8, 8}));
}

TEST(Encoder, RejectsIndivisibleAndWrongChannelInputs) {
  Model<double> model(small_vos(), 0);
  Graph<double> g;
  EXPECT_THROW(model.encode_query(g, constant(Tensor<double>({3, 18, 16}))), ConfigError);
  EXPECT_THROW(model.encode_query(g, constant(Tensor<double>({4, 16, 16}))), DimensionError);
}

TEST(Encoder, ZeroImageGivesZeroMap) {
  Model<double> model(small_vos(), 0);
  Graph<double> g;
  const auto x = model.encode_query(g, constant(Tensor<double>({3, 16, 16})));
  for (double v : x.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Encoder, GradientThroughTwoBlocks) {
  Rng rng(1);
  Encoder<double> enc(3, 8, 2, 2, rng);
  const auto x = random_image(rng, {3, 4, 4});
  Tensor<double> w({8, 2, 2});
  for (auto& v : w.data()) v = rng.uniform(-1, 1);
  const auto r = grad_check(
      [&](const std::vector<Var<double>>& in) {
        Graph<double> g;
        return ops::sum(ops::mul(enc.forward(g, in[0]), constant(w)));
      },
      {x});
  EXPECT_TRUE(r.passed(1e-5)) << r.max_rel_error;
}

TEST(MemoryEncoder, MaskChannelIsLive) {
  Rng rng(2);
  Model<double> model(small_vos(), 0);
  Graph<double> g;
  const auto frame = image(rng);
  const auto a = model.encode_memory_vos(g, frame, constant(Tensor<double>({1, 16, 16}, 0.0))).value();
  const auto b = model.encode_memory_vos(g, frame, constant(Tensor<double>({1, 16, 16}, 1.0))).value();
  EXPECT_EQ(a.shape(), (Shape{8, 4, 4}));
  EXPECT_GT(max_abs_diff(a, b), 0.0);
}

TEST(MemoryEncoder, ErrorPaths) {
  Rng rng(2);
  Model<double> model(small_vos(), 0);
  Graph<double> g;
  EXPECT_THROW(model.encode_memory_vos(g, image(rng), constant(Tensor<double>({1, 8, 16}))), DimensionError);
  Model<double> pred(small_prediction(), 0);
  EXPECT_THROW(pred.encode_memory_vos(g, image(rng), constant(Tensor<double>({1, 16, 16}))), UnsupportedError);
}

TEST(ClipEncoder, SensitiveToContentAndOrder) {
  Rng rng(3);
  Model<double> model(small_prediction(), 0);
  Graph<double> g;
  const auto a = image(rng), b = image(rng), c = image(rng);
  const auto same = model.encode_clip(g, {a, a, a}).value();
  const auto fwd = model.encode_clip(g, {a, b, c}).value();
  const auto rev = model.encode_clip(g, {c, b, a}).value();
  EXPECT_EQ(fwd.shape(), (Shape{8, 4, 4}));
  EXPECT_GT(max_abs_diff(same, fwd), 0.0);
  EXPECT_GT(max_abs_diff(fwd, rev), 0.0);
  EXPECT_THROW(model.encode_clip(g, {a, b}), ContractError);
}

TEST(Decoder, ShapesAndRange) {
  Model<float> vos(ModelConfig::vos_defaults(), 0);
  Graph<float> g;
  ReadOut<float> r;
  Tensor<float> feats({32, 8, 8});
  Rng rng(4);
  for (auto& v : feats.data()) v = float(rng.uniform(-50, 50));
  r.features = constant(feats);
  EXPECT_EQ(vos.decode(g, r).shape(), (Shape{2, 64, 64}));

  Model<float> pred(ModelConfig::prediction_defaults(), 0);
  Tensor<float> pf({16, 8, 8});
  for (auto& v : pf.data()) v = float(rng.uniform(-50, 50));
  r.features = constant(pf);
  const auto frame = pred.decode(g, r).value();
  EXPECT_EQ(frame.shape(), (Shape{3, 64, 64}));
  for (float v : frame.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  r.features = constant(Tensor<float>({12, 8, 8}));
  EXPECT_THROW(vos.decode(g, r), DimensionError);
}

TEST(Decoder, GradientCheck) {
  Rng rng(5);
  Decoder<double> dec(4, Head::kSegmentation, 1, 2, rng);
  const auto x = random_image(rng, {4, 2, 2});
  Tensor<double> w({2, 4, 4});
  for (auto& v : w.data()) v = rng.uniform(-1, 1);
  const auto r = grad_check(
      [&](const std::vector<Var<double>>& in) {
        Graph<double> g;
        return ops::sum(ops::mul(dec.forward(g, in[0]), constant(w)));
      },
      {x});
  EXPECT_TRUE(r.passed(1e-5)) << r.max_rel_error;
}

TEST(VosStep, FirstStepReadsOneSlotAndGrowsBank) {
  Rng rng(6);
  Model<double> model(small_vos(4), 0);
  ModelState<double> state(model.config(), 1, UpdateMode::kEval);
  Graph<double> g;
  EXPECT_THROW(vos_step(model, state, g, image(rng), 1), StateError);
  vos_init(model, state, g, image(rng), disk_mask(16, 16, 8, 8, 4));
  EXPECT_EQ(state.bank.size(), 1u);
  EXPECT_TRUE(state.bank.slot(0).pinned);
  const auto step = vos_step(model, state, g, image(rng), 1);
  EXPECT_EQ(step.readout.weights.shape(), (Shape{16, 16}));  // 4x4 query pixels over one 4x4 slot
  EXPECT_EQ(step.logits.shape(), (Shape{2, 16, 16}));
  EXPECT_EQ(state.bank.size(), 2u);
}

TEST(VosStep, BankStaysAtCapacity) {
  Rng rng(7);
  for (Policy p : {Policy::kLearned, Policy::kOldest, Policy::kRandomSelect}) {
    ModelConfig cfg = small_vos(4);
    cfg.policy = p;
    Model<double> model(cfg, 0);
    ModelState<double> state(cfg, 2, UpdateMode::kEval);
    Graph<double> g;
    vos_init(model, state, g, image(rng), disk_mask(16, 16, 8, 8, 4));
    for (std::size_t t = 1; t <= cfg.k_slots + 5; ++t) {
      vos_step(model, state, g, image(rng), t);
      ASSERT_EQ(state.bank.size(), std::min<std::size_t>(t + 1, cfg.k_slots));
    }
    EXPECT_EQ(state.bank.peak_size(), cfg.k_slots);
  }
}

TEST(VosStep, EvalRunsAreBitIdentical) {
  auto run = [] {
    Rng rng(8);
    Model<float> model(small_vos(3), 5);
    ModelState<float> state(model.config(), 3, UpdateMode::kEval);
    Graph<float> g;
    vos_init(model, state, g, constant(random_image(rng, {3, 16, 16}).cast<float>()),
             constant(Tensor<float>({1, 16, 16}, 1.0f)));
    std::vector<Tensor<float>> out;
    for (std::size_t t = 1; t < 8; ++t)
      out.push_back(vos_step(model, state, g, constant(random_image(rng, {3, 16, 16}).cast<float>()), t)
                        .foreground.value());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(VosStep, PredictedMaskFeedsMemory) {
  Rng rng(9);
  Model<double> model(small_vos(4), 0);
  Graph<double> g;
  const auto f0 = image(rng), f1 = image(rng);
  ModelState<double> a(model.config(), 4, UpdateMode::kEval), b(model.config(), 4, UpdateMode::kEval);
  for (auto* s : {&a, &b}) vos_init(model, *s, g, f0, disk_mask(16, 16, 6, 6, 4));
  const auto pa = vos_predict(model, a, g, f1);
  vos_commit(model, a, g, f1, pa.foreground, 1);
  const auto pb = vos_predict(model, b, g, f1);
  vos_commit(model, b, g, f1, ops::add_scalar(ops::scale(pb.foreground, -1.0), 1.0), 1);  // corrupted
  EXPECT_GT(max_abs_diff(a.bank.slot(1).tmpl.value(), b.bank.slot(1).tmpl.value()), 0.0);
  const auto f2 = image(rng);
  EXPECT_GT(max_abs_diff(vos_predict(model, a, g, f2).logits.value(), vos_predict(model, b, g, f2).logits.value()),
            0.0);
}

TEST(EndToEnd, EveryParameterReceivesGradient) {
  Rng rng(10);
  // K = 4 leaves two eligible slots, so the selection weights are not constant.
  ModelConfig cfg = small_vos(4);
  Model<double> model(cfg, 0);
  std::vector<Image> frames;
  std::vector<LabelMap> masks;
  for (int t = 0; t < 8; ++t) {
    frames.push_back(random_image(rng, {3, 16, 16}));
    LabelMap m(16, 16);
    for (std::size_t i = 0; i < m.labels.size(); ++i) m.labels[i] = rng.uniform() < 0.3;
    masks.push_back(m);
  }
  Tape<double> tape;
  Graph<double> g(&tape);
  model.parameters().zero_grad();
  const auto loss = vos_clip_loss(model, g, frames, masks, 1, 11, UpdateMode::kTrain);
  tape.backward(loss);
  for (const auto& e : model.parameters().entries()) {
    double norm = 0;
    bool finite = true;
    for (double v : e.param->grad.data()) {
      norm += v * v;
      finite = finite && std::isfinite(v);
    }
    EXPECT_TRUE(finite) << e.name;
    EXPECT_GT(norm, 0.0) << e.name;
  }
}

TEST(EndToEnd, TenFrameClipGradientsAreFinite) {
  Rng rng(11);
  ModelConfig cfg = ModelConfig::vos_defaults();
  Model<float> model(cfg, 0);
  SyntheticConfig sc;
  const auto seq = gen_moving_shapes(sc, 3);
  std::vector<Image> frames(seq.frames.begin(), seq.frames.begin() + 10);
  std::vector<LabelMap> masks;
  for (int t = 0; t < 10; ++t) masks.push_back(*seq.masks[t]);
  Tape<float> tape;
  Graph<float> g(&tape);
  model.parameters().zero_grad();
  const auto loss = vos_clip_loss(model, g, frames, masks, 1, 1, UpdateMode::kTrain);
  tape.backward(loss);
  EXPECT_TRUE(std::isfinite(loss.value().item()));
  for (const auto& e : model.parameters().entries())
    for (float v : e.param->grad.data()) ASSERT_TRUE(std::isfinite(v)) << e.name;
}

TEST(PredictionStep, SeedsMemoryThenUpdates) {
  Rng rng(12);
  Model<double> model(small_prediction(), 0);
  ModelState<double> state(model.config(), 0, UpdateMode::kEval);
  Graph<double> g;
  std::vector<Var<double>> frames;
  for (int t = 0; t < 10; ++t) frames.push_back(image(rng));
  EXPECT_THROW(prediction_step(model, state, g, {frames[0], frames[1], frames[2]}, 2), ContractError);
  for (std::size_t target = 3; target < 10; ++target) {
    const auto out = prediction_step(model, state, g, {frames[target - 3], frames[target - 2], frames[target - 1]},
                                     target);
    EXPECT_EQ(out.shape(), (Shape{3, 16, 16}));
    EXPECT_EQ(state.bank.slot(0).frame_index, 2u);
    EXPECT_LE(state.bank.size(), model.config().k_slots);
  }
  EXPECT_EQ(state.bank.size(), model.config().k_slots);
}
