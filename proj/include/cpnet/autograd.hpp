// Copyright 2026 The cpnet Authors. All Rights Reserved.
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

#pragma once

#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cpnet/tensor.hpp"

namespace cpnet {

// A trainable tensor. grad always has value's shape and is only ever
// accumulated into by Graph::backward; the optimizer or the caller zeroes it.
template <typename T>
struct Parameter {
  Parameter() = default;
  Parameter(std::string name_, Tensor<T> value_, bool decay_ = true)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()), decay(decay_) {}

  void zero_grad() { grad.fill(T{0}); }

  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  // False for BN scale/shift, which are exempt from weight decay.
  bool decay = true;
};

template <typename T>
class Graph;

// Handle to a node recorded in a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return graph->value(id).shape(); }
  bool valid() const { return graph != nullptr && id >= 0; }
};

// Tape of recorded operations. Nodes are appended in execution order, so the
// recording order is already a topological order; backward walks it in
// reverse.
template <typename T>
class Graph {
 public:
  // Receives the gradient of the node's output and pushes contributions into
  // its inputs through accumulate().
  using BackwardFn = std::function<void(Graph& graph, const Tensor<T>& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}); }

  // Leaf that receives a gradient readable via grad() after backward.
  Var<T> input(Tensor<T> value) { return push(std::move(value), true, nullptr, {}); }

  // Leaf bound to a Parameter; backward accumulates into param.grad.
  Var<T> parameter(Parameter<T>& param) { return push(param.value, true, &param, {}); }

  // Records an op output. The node requires a gradient iff any input does;
  // otherwise the backward rule is dropped.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    return record(std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
  }
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var<T>& v : inputs) {
      check_owned(v);
      needs = needs || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
    }
    return push(std::move(value), needs, nullptr, needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor<T>& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }

  // Gradient of the last backward() w.r.t. node v (zeros if unreached).
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    return n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
  }

  // Adds g into the gradient buffer of v. No-op for nodes that do not
  // require a gradient.
  void accumulate(Var<T> v, const Tensor<T>& g) {
    Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape()) {
      throw DimensionError("gradient shape " + shape_to_string(g.shape()) +
                           " does not match node shape " + shape_to_string(n.value.shape()));
    }
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    T* dst = n.grad.raw();
    const T* src = g.raw();
    const int64_t count = g.numel();
    for (int64_t i = 0; i < count; ++i) dst[i] += src[i];
  }

  // Mutable gradient buffer of v, allocated as zeros on first use.
  Tensor<T>& grad_buffer(Var<T> v) {
    Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  // Reverse-mode sweep from a scalar loss. Node gradients are reset at the
  // start of every call; Parameter gradients accumulate across calls.
  void backward(Var<T> loss) {
    check_owned(loss);
    if (value(loss.id).numel() != 1) {
      throw DimensionError("backward needs a scalar loss, got shape " +
                           shape_to_string(value(loss.id).shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor<T>();
    Node& root = nodes_[static_cast<std::size_t>(loss.id)];
    if (!root.requires_grad) return;
    root.grad = Tensor<T>(root.value.shape(), T{1});
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.empty()) continue;
      if (n.backward) {
        // The rule may append to other nodes' grads but never to this one.
        const Tensor<T> g = std::move(n.grad);
        n.backward(*this, g);
        n.grad = g;
      }
      if (n.param != nullptr) {
        T* dst = n.param->grad.raw();
        const T* src = n.grad.raw();
        for (int64_t i = 0; i < n.grad.numel(); ++i) dst[i] += src[i];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  void check_owned(Var<T> v) const {
    if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw ValueError("variable does not belong to this graph");
    }
  }

  Var<T> push(Tensor<T> value, bool requires_grad, Parameter<T>* param, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, param, std::move(backward)});
    return Var<T>{this, static_cast<int>(nodes_.size() - 1)};
  }

  // A deque so references handed out by value() survive later pushes.
  std::deque<Node> nodes_;
};

}  // namespace cpnet
