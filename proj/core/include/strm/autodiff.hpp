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

#ifndef STRM_AUTODIFF_HPP_
#define STRM_AUTODIFF_HPP_

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "strm/tensor.hpp"

namespace strm {

template <typename T>
class Tape;

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  Tape<T>* tape = nullptr;
  // Propagates this->grad into the inputs captured by the closure.
  std::function<void(const Tensor<T>&)> backward;

  bool tracked() const noexcept { return tape != nullptr; }

  void accumulate(const Tensor<T>& g) {
    if (grad.empty()) {
      grad = g;
      return;
    }
    T* dst = grad.raw();
    const T* src = g.raw();
    for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += src[i];
  }

  // Zero-initialized gradient buffer for in-place accumulation by kernels.
  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

// Handle to a value in the computation graph. Untracked variables carry no
// tape and never receive gradients.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  Tape<T>* tape() const { return node_ ? node_->tape : nullptr; }
  bool tracked() const { return node_ && node_->tracked(); }
  bool valid() const { return static_cast<bool>(node_); }

  // Gradient after Tape::backward; zeros when the variable is not on any
  // path to the loss.
  Tensor<T> grad() const {
    if (node_->grad.empty()) return Tensor<T>(node_->value.shape());
    return node_->grad;
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Var<T>(std::move(node));
}

// Trainable tensor with its accumulated gradient. Lives outside any tape.
template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  explicit Parameter(Tensor<T> v) : value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    grad.fill(T(0));
  }
};

// Records operations in execution order; backward() replays them in reverse.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->tape = this;
    nodes_.push_back(node);
    return Var<T>(node);
  }

  // One leaf per parameter per tape; its gradient is added to p.grad when the
  // tape is replayed.
  Var<T> watch(Parameter<T>& p) {
    if (auto it = watched_.find(&p); it != watched_.end()) return it->second;
    auto node = std::make_shared<Node<T>>();
    node->value = p.value;
    node->tape = this;
    Parameter<T>* target = &p;
    node->backward = [target](const Tensor<T>& g) {
      if (target->grad.shape() != target->value.shape()) {
        target->grad = Tensor<T>(target->value.shape());
      }
      T* dst = target->grad.raw();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    };
    nodes_.push_back(node);
    Var<T> v(node);
    watched_.emplace(&p, v);
    return v;
  }

  void record(const std::shared_ptr<Node<T>>& node) {
    node->tape = this;
    nodes_.push_back(node);
  }

  void backward(const Var<T>& loss) {
    if (!loss.valid() || loss.tape() != this) {
      throw ContractError("backward: loss is not recorded on this tape");
    }
    if (loss.size() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " +
                          shape_string(loss.shape()));
    }
    loss.node()->accumulate(Tensor<T>(loss.shape(), T(1)));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& n = **it;
      if (n.backward && !n.grad.empty()) n.backward(n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    watched_.clear();
  }

 private:
  std::vector<std::shared_ptr<Node<T>>> nodes_;
  std::unordered_map<const Parameter<T>*, Var<T>> watched_;
};

// Binds parameters for one forward pass: tracked leaves while training,
// plain constants during inference.
template <typename T>
class Graph {
 public:
  Graph() = default;
  explicit Graph(Tape<T>* tape) : tape_(tape) {}

  Var<T> operator()(Parameter<T>& p) const {
    return tape_ ? tape_->watch(p) : constant(p.value);
  }
  Tape<T>* tape() const noexcept { return tape_; }
  bool training() const noexcept { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
};

// Named parameter registry used by the optimizer and the checkpoint code.
template <typename T>
class ParameterSet {
 public:
  void add(std::string name, Parameter<T>& p) {
    entries_.push_back({std::move(name), &p});
  }
  void append(const std::string& prefix, const ParameterSet& other) {
    for (const auto& e : other.entries_) entries_.push_back({prefix + e.name, e.param});
  }

  struct Entry {
    std::string name;
    Parameter<T>* param;
  };
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  void zero_grad() {
    for (auto& e : entries_) e.param->zero_grad();
  }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.param->value.size();
    return n;
  }

 private:
  std::vector<Entry> entries_;
};

}  // namespace strm

#endif  // STRM_AUTODIFF_HPP_
