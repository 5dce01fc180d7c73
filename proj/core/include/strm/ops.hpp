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

#ifndef STRM_OPS_HPP_
#define STRM_OPS_HPP_

#include <cstddef>
#include <vector>

#include "strm/autodiff.hpp"

// Differentiable operations over Var. Every op records itself on the tape of
// its tracked inputs (if any) and is otherwise a plain forward computation.
// Instantiated for float and double.
namespace strm::ops {

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kNormEps = 1e-12;

// Elementwise, identical shapes.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
// Multiplies every element of a by the single-element variable s.
template <typename T> Var<T> scale_by(const Var<T>& a, const Var<T>& s);

template <typename T> Var<T> leaky_relu(const Var<T>& x, T slope = T(kLeakySlope));
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> tanh(const Var<T>& x);

// a: m x k, b: k x n.
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> transpose(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);

// input C_in x H x W, kernel C_out x C_in x k x k (k odd), bias C_out.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias,
              std::size_t stride = 1, std::size_t padding = 0);

// Softmax over the last axis with max subtraction. When mask is non-empty it
// must match the last axis; masked-out entries get exactly zero weight.
template <typename T>
Var<T> softmax(const Var<T>& x, const std::vector<bool>& mask = {});

// input C x ..., normalized over groups of C/groups channels.
template <typename T>
Var<T> group_norm(const Var<T>& x, std::size_t groups, const Var<T>& gamma,
                  const Var<T>& beta, T eps = T(1e-5));

// Normalizes each position's channel vector (axis 0): x / sqrt(|x|^2 + eps).
template <typename T>
Var<T> l2_normalize(const Var<T>& x, T eps = T(kNormEps));

// Concatenation / slicing along axis 0.
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice(const Var<T>& x, std::size_t begin, std::size_t end);
// Single-element vars -> vector of length n.
template <typename T> Var<T> stack(const std::vector<Var<T>>& scalars);
template <typename T> Var<T> element(const Var<T>& x, std::size_t index);

// Bilinear x2 upsampling of C x H x W (half-pixel centers).
template <typename T> Var<T> upsample2x(const Var<T>& x);

// m x n -> m, maximum over the last axis (ties resolved to the lowest index).
template <typename T> Var<T> max_last(const Var<T>& x);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);

// logits C x H x W, labels H*W class indices -> mean negative log-likelihood.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels);
template <typename T> Var<T> mse(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mae(const Var<T>& a, const Var<T>& b);

// Forward: one-hot at the argmax of a_soft (lowest index on ties).
// Backward: identity, so gradients reach a_soft as if it had been used.
template <typename T> Var<T> straight_through(const Var<T>& a_soft);

// (1 - a) * old_value + a * new_value with a single-element weight. Exact
// copies of either input when a is exactly 0 or 1.
template <typename T>
Var<T> blend(const Var<T>& old_value, const Var<T>& new_value, const Var<T>& a);

}  // namespace strm::ops

#endif  // STRM_OPS_HPP_
