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

#include "../support/oracles.hpp"
#include "strm/checkpoint.hpp"
#include "strm/errors.hpp"
#include "strm/gradcheck.hpp"
#include "strm/ops.hpp"
#include "strm/random.hpp"

using namespace strm;

namespace {

Tensor<double> random_tensor(Rng& rng, Shape s, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Var<double> weighted(const Var<double>& v) {
  Tensor<double> w(v.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::cos(0.5 + 0.9 * double(i));
  return ops::sum(ops::mul(v, constant(w)));
}

}  // namespace

TEST(Tensor, RejectsZeroSizedDimension) {
  EXPECT_THROW(Tensor<float>({3, 0, 2}), DimensionError);
}

TEST(Tensor, ShapeMismatchNamesBothShapes) {
  auto a = constant(Tensor<double>({2, 3}));
  auto b = constant(Tensor<double>({3, 2}));
  try {
    ops::add(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("3x2"), std::string::npos) << msg;
  }
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  Rng rng(1);
  for (auto [stride, pad, k] : {std::tuple{1, 1, 3}, {2, 1, 3}, {1, 0, 1}, {1, 2, 5}, {2, 0, 3}}) {
    auto x = random_tensor(rng, {3, 7, 6});
    auto w = random_tensor(rng, {4, 3, std::size_t(k), std::size_t(k)});
    auto b = random_tensor(rng, {4});
    auto got = ops::conv2d(constant(x), constant(w), constant(b), std::size_t(stride), std::size_t(pad)).value();
    auto want = oracle::conv2d(x, w, b, std::size_t(stride), std::size_t(pad));
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Conv2d, ChannelMismatchNamesAxis) {
  auto x = constant(Tensor<double>({3, 4, 4}));
  auto w = constant(Tensor<double>({2, 5, 3, 3}));
  auto b = constant(Tensor<double>({2}));
  try {
    ops::conv2d(x, w, b, 1, 1);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos) << e.what();
  }
}

TEST(Softmax, MatchesOracleAndSumsToOne) {
  Rng rng(2);
  auto x = random_tensor(rng, {4, 7}, -30, 30);
  auto y = ops::softmax(constant(x)).value();
  for (std::size_t r = 0; r < 4; ++r) {
    std::vector<double> row(x.raw() + r * 7, x.raw() + r * 7 + 7);
    auto want = oracle::softmax(row);
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_NEAR(y[r * 7 + c], want[c], 1e-14);
      s += y[r * 7 + c];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, StableForLargeLogits) {
  auto y = ops::softmax(constant(Tensor<double>({3}, std::vector<double>{1000, 1000, -1000}))).value();
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
  EXPECT_EQ(y[2], 0.0);
}

TEST(Softmax, MaskedEntriesAreExactlyZero) {
  auto y = ops::softmax(constant(Tensor<double>({4}, std::vector<double>{3, 1, 2, 5})), {true, false, true, false}).value();
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[3], 0.0);
  EXPECT_NEAR(y[0] + y[2], 1.0, 1e-15);
}

TEST(GroupNorm, MatchesOracle) {
  Rng rng(3);
  auto x = random_tensor(rng, {6, 3, 4}, -2, 3);
  auto g = random_tensor(rng, {6});
  auto b = random_tensor(rng, {6});
  auto got = ops::group_norm(constant(x), 3, constant(g), constant(b), 1e-5).value();
  auto want = oracle::group_norm(x, 3, g, b, 1e-5);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(GroupNorm, IndivisibleChannelsIsConfigError) {
  auto x = constant(Tensor<double>({5, 2, 2}));
  auto g = constant(Tensor<double>({5}, 1.0));
  auto b = constant(Tensor<double>({5}));
  EXPECT_THROW(ops::group_norm(x, 2, g, b), ConfigError);
}

TEST(Ops, LeakyReluUsesSlope) {
  auto y = ops::leaky_relu(constant(Tensor<double>({2}, std::vector<double>{-2, 3}))).value();
  EXPECT_DOUBLE_EQ(y[0], -0.02);
  EXPECT_DOUBLE_EQ(y[1], 3.0);
}

TEST(Ops, MaxLastTiesGoToLowestIndex) {
  auto x = constant(Tensor<double>({1, 4}, std::vector<double>{1, 5, 5, 2}));
  Tape<double> tape;
  auto leaf = tape.leaf(x.value());
  auto m = ops::max_last(leaf);
  EXPECT_EQ(m.value()[0], 5.0);
  tape.backward(ops::sum(m));
  EXPECT_EQ(leaf.grad()[1], 1.0);
  EXPECT_EQ(leaf.grad()[2], 0.0);
}

TEST(Ops, StraightThroughForwardIsOneHotBackwardIsIdentity) {
  Tape<double> tape;
  auto a = tape.leaf(Tensor<double>({3}, std::vector<double>{0.2, 0.5, 0.3}));
  auto h = ops::straight_through(a);
  EXPECT_EQ(h.value()[0], 0.0);
  EXPECT_EQ(h.value()[1], 1.0);
  EXPECT_EQ(h.value()[2], 0.0);
  tape.backward(weighted(h));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(a.grad()[i], std::cos(0.5 + 0.9 * double(i)));
}

TEST(Ops, BlendIsExactAtEndpoints) {
  Rng rng(4);
  auto x = constant(random_tensor(rng, {2, 3, 3}));
  auto y = constant(random_tensor(rng, {2, 3, 3}));
  EXPECT_EQ(ops::blend(x, y, constant(Tensor<double>::scalar(1.0))).value(), y.value());
  EXPECT_EQ(ops::blend(x, y, constant(Tensor<double>::scalar(0.0))).value(), x.value());
}

TEST(Ops, CrossEntropyMatchesHandComputation) {
  // Two classes, one pixel: logits (0, log 3) -> p(class 1) = 3/4.
  auto logits = constant(Tensor<double>({2, 1, 1}, std::vector<double>{0.0, std::log(3.0)}));
  EXPECT_NEAR(ops::cross_entropy(logits, {1}).value().item(), -std::log(0.75), 1e-15);
  EXPECT_NEAR(ops::cross_entropy(logits, {0}).value().item(), -std::log(0.25), 1e-15);
}

TEST(Ops, UpsampleOfConstantIsConstant) {
  auto y = ops::upsample2x(constant(Tensor<double>({2, 3, 4}, 0.7))).value();
  EXPECT_EQ(y.shape(), (Shape{2, 6, 8}));
  for (double v : y.data()) EXPECT_NEAR(v, 0.7, 1e-15);
}

TEST(Autodiff, ParameterGradientMatchesLeafGradient) {
  Rng rng(5);
  Parameter<double> p(random_tensor(rng, {3, 3}));
  auto x = random_tensor(rng, {3, 3});
  Tape<double> tape;
  Graph<double> g(&tape);
  auto w = g(p);
  auto leaf = tape.leaf(p.value);
  tape.backward(ops::add(weighted(ops::mul(w, constant(x))), weighted(ops::mul(leaf, constant(x)))));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(p.grad[i], leaf.grad()[i]);
}

TEST(Autodiff, WatchingTwiceSharesOneLeaf) {
  Parameter<double> p(Tensor<double>({2}, 1.0));
  Tape<double> tape;
  Graph<double> g(&tape);
  tape.backward(ops::sum(ops::add(g(p), g(p))));
  EXPECT_DOUBLE_EQ(p.grad[0], 2.0);
}

TEST(Autodiff, GraphWithoutTapeGivesConstants) {
  Parameter<double> p(Tensor<double>({2}, 1.0));
  Graph<double> g;
  EXPECT_FALSE(g(p).tracked());
}

TEST(Autodiff, NonScalarLossIsContractError) {
  Tape<double> tape;
  auto a = tape.leaf(Tensor<double>({2}, 1.0));
  EXPECT_THROW(tape.backward(a), ContractError);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // ops::straight_through has an identity backward, so checking it against
  // its own (piecewise constant) forward must fail.
  auto fn = [](const std::vector<Var<double>>& x) { return weighted(ops::straight_through(ops::softmax(x[0]))); };
  Rng rng(6);
  EXPECT_FALSE(grad_check(fn, {random_tensor(rng, {4})}).passed(1e-5));
}

TEST(GradCheck, ConvAndGroupNormChain) {
  Rng rng(7);
  auto fn = [](const std::vector<Var<double>>& x) {
    auto h = ops::conv2d(x[0], x[1], x[2], 1, 1);
    return weighted(ops::tanh(ops::group_norm(h, 2, x[3], x[4])));
  };
  auto r = grad_check(fn, {random_tensor(rng, {2, 4, 4}), random_tensor(rng, {4, 2, 3, 3}), random_tensor(rng, {4}),
                           random_tensor(rng, {4}), random_tensor(rng, {4})});
  EXPECT_TRUE(r.passed(1e-5)) << r.max_rel_error;
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(8);
  Checkpoint c;
  Tensor<float> f({2, 3});
  for (auto& v : f.data()) v = float(rng.normal());
  c.add("a.weight", f);
  c.add("b.bias", random_tensor(rng, {4}));
  const auto bytes = encode_checkpoint(c);
  EXPECT_EQ(decode_checkpoint(bytes), c);
  const auto path = std::filesystem::temp_directory_path() / "strm_ckpt_roundtrip.strm";
  save_checkpoint(path, c);
  EXPECT_EQ(load_checkpoint(path), c);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(path)), bytes);
  std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedBytesAreRejected) {
  Checkpoint c;
  c.add("w", Tensor<double>({3}, 1.0));
  auto bytes = encode_checkpoint(c);
  bytes.resize(bytes.size() - 4);
  EXPECT_THROW(decode_checkpoint(bytes), Error);
}

TEST(Checkpoint, RestoreRejectsMismatchedManifest) {
  Parameter<double> p(Tensor<double>({2, 2}));
  ParameterSet<double> set;
  set.add("layer.weight", p);
  Checkpoint c;
  c.add("layer.weight", Tensor<double>({3, 2}));
  try {
    restore_parameters(set, c);
    FAIL();
  } catch (const ManifestError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.weight"), std::string::npos);
  }
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.bits(), b.bits());
  Rng c(42);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}
