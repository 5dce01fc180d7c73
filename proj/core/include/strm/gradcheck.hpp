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

#ifndef STRM_GRADCHECK_HPP_
#define STRM_GRADCHECK_HPP_

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "strm/autodiff.hpp"

namespace strm {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  bool finite = true;  // false when any analytic or numeric gradient was non-finite

  bool passed(double tolerance) const { return finite && max_rel_error < tolerance; }
};

using ScalarFn = std::function<Var<double>(const std::vector<Var<double>>&)>;

// Reverse-mode gradients of `analytic_fn` against central differences of
// `numeric_fn`. The two differ only when a node's backward deliberately
// follows a surrogate (the straight-through estimator and its soft path).
inline GradCheckResult grad_check_surrogate(const ScalarFn& analytic_fn, const ScalarFn& numeric_fn,
                                            const std::vector<Tensor<double>>& inputs,
                                            double step = 1e-5) {
  GradCheckResult result;
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    Var<double> loss = analytic_fn(leaves);
    tape.backward(loss);
    for (const auto& l : leaves) analytic.push_back(l.grad());
  }
  auto evaluate = [&](const std::vector<Tensor<double>>& xs) {
    std::vector<Var<double>> vars;
    for (const auto& t : xs) vars.push_back(constant(t));
    return numeric_fn(vars).value().item();
  };
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + step;
      const double up = evaluate(probe);
      probe[k][i] = orig - step;
      const double down = evaluate(probe);
      probe[k][i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[k][i];
      if (!std::isfinite(a) || !std::isfinite(numeric)) {
        result.finite = false;
        result.worst_input = k;
        result.worst_index = i;
        result.max_rel_error = std::numeric_limits<double>::infinity();
        return result;
      }
      const double rel =
          std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_input = k;
        result.worst_index = i;
      }
    }
  }
  return result;
}

// Compares reverse-mode gradients of fn against central differences over every
// coordinate of every input. Relative error per coordinate is
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline GradCheckResult grad_check(const ScalarFn& fn, const std::vector<Tensor<double>>& inputs,
                                  double step = 1e-5) {
  return grad_check_surrogate(fn, fn, inputs, step);
}

}  // namespace strm

#endif  // STRM_GRADCHECK_HPP_
