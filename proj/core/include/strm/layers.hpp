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

#ifndef STRM_LAYERS_HPP_
#define STRM_LAYERS_HPP_

#include <cmath>
#include <string>

#include "strm/autodiff.hpp"
#include "strm/ops.hpp"
#include "strm/random.hpp"

namespace strm {

template <typename T>
struct Conv2d {
  Parameter<T> weight;
  Parameter<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv2d() = default;
  // Kaiming-uniform initialisation for leaky ReLU, zero bias.
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, Rng& rng)
      : weight(Tensor<T>({out, in, kernel, kernel})),
        bias(Tensor<T>({out})),
        stride(stride_),
        padding(kernel / 2) {
    const double fan_in = static_cast<double>(in * kernel * kernel);
    const double slope = ops::kLeakySlope;
    const double bound = std::sqrt(6.0 / ((1.0 + slope * slope) * fan_in));
    for (auto& w : weight.value.data()) w = static_cast<T>(rng.uniform(-bound, bound));
  }

  std::size_t in_channels() const { return weight.value.shape()[1]; }
  std::size_t out_channels() const { return weight.value.shape()[0]; }

  Var<T> operator()(const Graph<T>& g, const Var<T>& x) {
    if (x.value().rank() != 3 || x.shape()[0] != in_channels()) {
      throw DimensionError("conv layer expects " + std::to_string(in_channels()) +
                           " input channels on axis 0, got " + shape_string(x.shape()));
    }
    return ops::conv2d(x, g(weight), g(bias), stride, padding);
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) {
    set.add(prefix + ".weight", weight);
    set.add(prefix + ".bias", bias);
  }
};

template <typename T>
struct GroupNorm {
  Parameter<T> gamma;
  Parameter<T> beta;
  std::size_t groups = 1;

  GroupNorm() = default;
  GroupNorm(std::size_t channels, std::size_t groups_)
      : gamma(Tensor<T>({channels}, T(1))), beta(Tensor<T>({channels})), groups(groups_) {
    if (groups == 0 || channels % groups != 0) {
      throw ConfigError("group norm: " + std::to_string(channels) +
                        " channels not divisible into " + std::to_string(groups) + " groups");
    }
  }

  Var<T> operator()(const Graph<T>& g, const Var<T>& x) {
    return ops::group_norm(x, groups, g(gamma), g(beta));
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) {
    set.add(prefix + ".gamma", gamma);
    set.add(prefix + ".beta", beta);
  }
};

// Largest group count <= 4 that divides the channel count.
inline std::size_t default_groups(std::size_t channels) {
  for (std::size_t g = 4; g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

}  // namespace strm

#endif  // STRM_LAYERS_HPP_
