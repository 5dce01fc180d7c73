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

#include <cmath>

#include "strm/attention.hpp"
#include "strm/gradcheck.hpp"
#include "strm/harness.hpp"
#include "strm/memory.hpp"
#include "strm/ops.hpp"

namespace strm {

namespace {

using D = double;
using Inputs = std::vector<Var<D>>;

// Fixed, non-uniform weights turn any output into a scalar whose gradient
// exercises every element differently.
Var<D> weighted_sum(const Var<D>& v) {
  Tensor<D> w(v.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.37 + 1.31 * double(i));
  return ops::sum(ops::mul(v, constant(std::move(w))));
}

class Suite {
 public:
  Suite(std::uint64_t seed, double tol) : rng_(seed), tol_(tol) {}

  Tensor<D> rand(Shape s, double lo = -1, double hi = 1) {
    Tensor<D> t(std::move(s));
    for (auto& v : t.data()) v = rng_.uniform(lo, hi);
    return t;
  }
  // Entries bounded away from zero, for ops with a kink there.
  Tensor<D> rand_away(Shape s) {
    Tensor<D> t(std::move(s));
    for (auto& v : t.data()) v = (rng_.uniform() < 0.5 ? -1 : 1) * rng_.uniform(0.2, 1.0);
    return t;
  }
  Rng& rng() { return rng_; }

  void check(const std::string& name, const ScalarFn& fn, const std::vector<Tensor<D>>& inputs) {
    record(name, grad_check(fn, inputs));
  }
  void check_surrogate(const std::string& name, const ScalarFn& analytic, const ScalarFn& numeric,
                       const std::vector<Tensor<D>>& inputs) {
    record(name, grad_check_surrogate(analytic, numeric, inputs));
  }

  std::vector<GradCaseResult> results;

 private:
  void record(const std::string& name, const GradCheckResult& r) {
    results.push_back({name, r.max_rel_error, r.finite, r.passed(tol_)});
  }
  Rng rng_;
  double tol_;
};

void elementwise_cases(Suite& s) {
  s.check("add", [](const Inputs& x) { return weighted_sum(ops::add(x[0], x[1])); }, {s.rand({3, 4}), s.rand({3, 4})});
  s.check("sub", [](const Inputs& x) { return weighted_sum(ops::sub(x[0], x[1])); }, {s.rand({3, 4}), s.rand({3, 4})});
  s.check("mul", [](const Inputs& x) { return weighted_sum(ops::mul(x[0], x[1])); }, {s.rand({3, 4}), s.rand({3, 4})});
  s.check("scale", [](const Inputs& x) { return weighted_sum(ops::scale(x[0], 1.7)); }, {s.rand({5})});
  s.check("add_scalar", [](const Inputs& x) { return weighted_sum(ops::mul(ops::add_scalar(x[0], 0.3), x[0])); },
          {s.rand({5})});
  s.check("scale_by", [](const Inputs& x) { return weighted_sum(ops::scale_by(x[0], x[1])); },
          {s.rand({2, 3}), s.rand({1})});
  s.check("leaky_relu", [](const Inputs& x) { return weighted_sum(ops::leaky_relu(x[0])); }, {s.rand_away({12})});
  s.check("sigmoid", [](const Inputs& x) { return weighted_sum(ops::sigmoid(x[0])); }, {s.rand({12}, -4, 4)});
  s.check("tanh", [](const Inputs& x) { return weighted_sum(ops::tanh(x[0])); }, {s.rand({12}, -2, 2)});
}

void linear_cases(Suite& s) {
  s.check("matmul", [](const Inputs& x) { return weighted_sum(ops::matmul(x[0], x[1])); },
          {s.rand({3, 4}), s.rand({4, 2})});
  s.check("transpose", [](const Inputs& x) { return weighted_sum(ops::transpose(x[0])); }, {s.rand({3, 4})});
  s.check("reshape", [](const Inputs& x) { return weighted_sum(ops::mul(ops::reshape(x[0], {4, 3}), x[1])); },
          {s.rand({3, 4}), s.rand({4, 3})});
  s.check("conv2d", [](const Inputs& x) { return weighted_sum(ops::conv2d(x[0], x[1], x[2], 1, 1)); },
          {s.rand({2, 5, 5}), s.rand({3, 2, 3, 3}), s.rand({3})});
  s.check("conv2d_stride2", [](const Inputs& x) { return weighted_sum(ops::conv2d(x[0], x[1], x[2], 2, 1)); },
          {s.rand({2, 6, 6}), s.rand({2, 2, 3, 3}), s.rand({2})});
  s.check("conv2d_1x1", [](const Inputs& x) { return weighted_sum(ops::conv2d(x[0], x[1], x[2], 1, 0)); },
          {s.rand({3, 4, 4}), s.rand({2, 3, 1, 1}), s.rand({2})});
}

void normalization_cases(Suite& s) {
  s.check("softmax", [](const Inputs& x) { return weighted_sum(ops::softmax(x[0])); }, {s.rand({3, 5}, -2, 2)});
  s.check("softmax_masked",
          [](const Inputs& x) { return weighted_sum(ops::softmax(x[0], {true, false, true, true, false})); },
          {s.rand({2, 5}, -2, 2)});
  s.check("group_norm", [](const Inputs& x) { return weighted_sum(ops::group_norm(x[0], 2, x[1], x[2])); },
          {s.rand({4, 3, 3}), s.rand({4}), s.rand({4})});
  s.check("l2_normalize", [](const Inputs& x) { return weighted_sum(ops::l2_normalize(x[0])); },
          {s.rand({3, 2, 2})});
}

void structural_cases(Suite& s) {
  s.check("concat", [](const Inputs& x) { return weighted_sum(ops::concat<D>({x[0], x[1]})); },
          {s.rand({2, 3}), s.rand({1, 3})});
  s.check("slice", [](const Inputs& x) { return weighted_sum(ops::slice(x[0], 1, 3)); }, {s.rand({4, 2})});
  s.check("stack",
          [](const Inputs& x) { return weighted_sum(ops::stack<D>({ops::sum(x[0]), ops::mean(x[0]), x[1]})); },
          {s.rand({3}), s.rand({1})});
  s.check("element", [](const Inputs& x) { return ops::mul(ops::element(x[0], 2), ops::element(x[0], 0)); },
          {s.rand({4})});
  s.check("upsample2x", [](const Inputs& x) { return weighted_sum(ops::upsample2x(x[0])); }, {s.rand({2, 3, 3})});
  s.check("max_last", [](const Inputs& x) { return weighted_sum(ops::max_last(x[0])); }, {s.rand({3, 5})});
  s.check("sum", [](const Inputs& x) { return ops::mul(ops::sum(x[0]), ops::sum(x[0])); }, {s.rand({2, 3})});
  s.check("mean", [](const Inputs& x) { return ops::mul(ops::mean(x[0]), ops::sum(x[0])); }, {s.rand({2, 3})});
}

void loss_cases(Suite& s) {
  s.check("cross_entropy",
          [](const Inputs& x) { return ops::cross_entropy(x[0], {0, 2, 1, 1}); }, {s.rand({3, 2, 2}, -2, 2)});
  s.check("mse", [](const Inputs& x) { return ops::mse(x[0], x[1]); }, {s.rand({2, 3}), s.rand({2, 3})});
  Tensor<D> a = s.rand({2, 3}), b = a;
  for (auto& v : b.data()) v += (s.rng().uniform() < 0.5 ? -1 : 1) * s.rng().uniform(0.1, 0.5);
  s.check("mae", [](const Inputs& x) { return ops::mae(x[0], x[1]); }, {a, b});
}

void memory_cases(Suite& s) {
  // The straight-through node: reverse mode through the one-hot forward must
  // equal the derivative of the soft weights it stands in for.
  s.check_surrogate(
      "straight_through",
      [](const Inputs& x) { return weighted_sum(ops::straight_through(ops::softmax(x[0]))); },
      [](const Inputs& x) { return weighted_sum(ops::softmax(x[0])); }, {s.rand({5}, -2, 2)});
  s.check("blend", [](const Inputs& x) { return weighted_sum(ops::blend(x[0], x[1], x[2])); },
          {s.rand({2, 2, 2}), s.rand({2, 2, 2}), s.rand({1}, 0.2, 0.8)});
  s.check("similarity", [](const Inputs& x) { return similarity(x[0], x[1]); },
          {s.rand({3, 2, 3}), s.rand({3, 2, 3})});
  Tensor<D> noise({4});
  for (auto& v : noise.data()) v = s.rng().gumbel();
  s.check(
      "gumbel_softmax",
      [noise](const Inputs& x) { return weighted_sum(gumbel_softmax(x[0], 0.7, noise, {false, true, true, false})); },
      {s.rand({4})});
  s.check(
      "memory_read",
      [](const Inputs& x) {
        KeyValue<D> q{x[0], x[1], KvRole::kQuery};
        std::vector<KeyValue<D>> mem{{x[2], x[3], KvRole::kMemory}, {x[4], x[5], KvRole::kMemory}};
        return weighted_sum(memory_read(q, concat_memory_kv(mem)).features);
      },
      {s.rand({2, 2, 2}), s.rand({3, 2, 2}), s.rand({2, 2, 2}), s.rand({3, 2, 2}), s.rand({2, 2, 2}),
       s.rand({3, 2, 2})});
  s.check("align_features", [](const Inputs& x) { return weighted_sum(align_features(x[0], x[1])); },
          {s.rand({2, 2, 2}), s.rand({2, 2, 2})});
}

void module_cases(Suite& s) {
  const Graph<D> g;  // parameters enter as constants; inputs are the probed leaves
  Rng rng(Rng::mix(11, 3));
  auto fusion = std::make_shared<FusionModule<D>>(2, rng);
  s.check("fuse_templates", [fusion, g](const Inputs& x) { return weighted_sum(fuse_templates(g, x[0], x[1], *fusion).fused); },
          {s.rand({2, 3, 3}), s.rand({2, 3, 3})});
  auto proj = std::make_shared<KvProjector<D>>(4, 2, 3, rng);
  s.check("project_kv", [proj, g](const Inputs& x) {
    KeyValue<D> kv = project_kv(g, x[0], *proj, KvRole::kQuery);
    return ops::add(weighted_sum(kv.key), weighted_sum(kv.value));
  }, {s.rand({4, 3, 3})});
  auto enc = std::make_shared<Encoder<D>>(3, 8, 2, 2, rng);
  s.check("encoder", [enc, g](const Inputs& x) { return weighted_sum(enc->forward(g, x[0])); },
          {s.rand({3, 8, 8}, 0, 1)});
  auto dec = std::make_shared<Decoder<D>>(4, Head::kFrame, 2, 2, rng);
  s.check("decoder", [dec, g](const Inputs& x) { return weighted_sum(dec->forward(g, x[0])); },
          {s.rand({4, 3, 3})});
}

// Full VOS clip with the soft write path: encoders, key/value read, decoder,
// update-key scoring, Gumbel-Softmax and the blended memory write.
void pipeline_case(Suite& s) {
  ModelConfig cfg;
  cfg.base_width = 8;
  cfg.encoder_blocks = 2;
  cfg.decoder_blocks = 2;
  cfg.downsample = 4;
  cfg.k_slots = 4;
  auto model = std::make_shared<Model<D>>(cfg, 5);
  constexpr std::size_t frames = 6, side = 8;
  std::vector<Tensor<D>> inputs;
  for (std::size_t t = 0; t < frames; ++t) inputs.push_back(s.rand({3, side, side}, 0, 1));
  inputs.push_back(s.rand({1, side, side}, 0, 1));  // soft first-frame mask
  std::vector<int> labels(side * side);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = (i / side + i % side) % 3 == 0;

  auto fn = [model, labels](const Inputs& x) {
    Graph<D> g(x[0].tape());
    ModelState<D> state(model->config(), 99, UpdateMode::kSoftPath);
    vos_init(*model, state, g, x[0], x[frames]);
    Var<D> loss;
    for (std::size_t t = 1; t < frames; ++t) {
      VosStep<D> step = vos_step(*model, state, g, x[t], t);
      Var<D> term = ops::cross_entropy(step.logits, labels);
      loss = loss.valid() ? ops::add(loss, term) : term;
    }
    return loss;
  };
  s.check("pipeline_soft_path", fn, inputs);
}

}  // namespace

std::vector<GradCaseResult> run_gradient_suite(std::uint64_t seed, double tolerance) {
  Suite s(seed, tolerance);
  elementwise_cases(s);
  linear_cases(s);
  normalization_cases(s);
  structural_cases(s);
  loss_cases(s);
  memory_cases(s);
  module_cases(s);
  pipeline_case(s);
  return s.results;
}

}  // namespace strm
