/* Copyright 2026 The nmn-dialog Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Reverse-mode autodiff on a linear tape. Values are immutable once written
// by the forward pass; backward sweeps the tape in reverse creation order.
// Parameter leaves are bound to ParameterStore entries and are deduplicated,
// so a parameter used at many sites accumulates a single gradient.

#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nmnd/params.hpp"
#include "nmnd/tensor.hpp"

namespace nmnd {

template <typename S>
class Graph;

/// Lightweight handle to a node on a Graph's tape.
template <typename S>
class Value {
 public:
  Value() = default;
  Value(Graph<S>* g, int id) : g_(g), id_(id) {}

  bool valid() const { return g_ != nullptr; }
  int id() const { return id_; }
  Graph<S>* graph() const { return g_; }

  const TensorData<S>& data() const;
  const Shape& shape() const { return data().shape; }
  const ArrayX<S>& array() const { return data().v; }
  std::int64_t size() const { return data().size(); }
  S scalar() const;
  S item(std::int64_t i) const { return data().v[i]; }
  bool requires_grad() const;

 private:
  Graph<S>* g_ = nullptr;
  int id_ = -1;
};

template <typename S>
class Graph {
 public:
  using BackFn = std::function<void(Graph<S>&, const ArrayX<S>&)>;

  struct Node {
    TensorData<S> value;
    ArrayX<S> grad;
    BackFn back;
    const char* op = "";
    int param_index = -1;
    bool requires_grad = false;
  };

  explicit Graph(bool recording = true, bool check_finite = true)
      : recording_(recording), check_finite_(check_finite) {
    nodes_.reserve(1024);
  }

  bool recording() const { return recording_; }
  void set_check_finite(bool on) { check_finite_ = on; }
  std::size_t size() const { return nodes_.size(); }

  Value<S> leaf(TensorData<S> value, bool requires_grad = false) {
    return add_node("leaf", std::move(value), recording_ && requires_grad, nullptr, -1);
  }

  Value<S> constant(TensorData<S> value) { return leaf(std::move(value), false); }

  Value<S> scalar_const(S x) {
    TensorData<S> t{Shape{}, ArrayX<S>::Constant(1, x)};
    return constant(std::move(t));
  }

  /// Leaf bound to a store entry; repeated binds return the same node.
  /// Nodes are keyed by the store's dense parameter index (the same index
  /// backward() uses to route gradients), so a graph must only ever bind
  /// parameters from a single store.
  Value<S> param(Parameter<S>& p) {
    auto it = param_nodes_.find(p.index);
    if (it != param_nodes_.end()) return Value<S>(this, it->second);
    TensorData<S> t{p.shape, p.value};
    Value<S> v = add_node("param", std::move(t), recording_ && p.trainable, nullptr, p.index);
    param_nodes_.emplace(p.index, v.id());
    return v;
  }

  Value<S> param(ParameterStore<S>& store, std::string_view name) {
    return param(store.at(name));
  }

  /// Core node constructor used by every operation.
  Value<S> add_node(const char* op, TensorData<S> value, bool requires_grad, BackFn back,
                    int param_index = -1) {
    if (check_finite_ && !value.all_finite())
      throw Error(std::string("non-finite values produced by op '") + op + "'");
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.param_index = param_index;
    n.requires_grad = requires_grad;
    if (requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Value<S>(this, static_cast<int>(nodes_.size()) - 1);
  }

  const Node& node(int id) const { return nodes_[id]; }
  const TensorData<S>& val(int id) const { return nodes_[id].value; }
  bool rg(int id) const { return nodes_[id].requires_grad; }

  /// Attach the backward closure after creation, for ops whose closure needs
  /// the new node's own id (to reuse the forward output in the backward pass).
  void set_back(int id, BackFn back) {
    if (nodes_[id].requires_grad) nodes_[id].back = std::move(back);
  }

  /// Accumulate a gradient contribution into node `id` (no-op if that node
  /// does not require gradients).
  template <typename Expr>
  void accum(int id, const Expr& contribution) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = ArrayX<S>::Zero(n.value.size());
    }
    n.grad += contribution;
  }

  const ArrayX<S>& grad_of(Value<S> v) const {
    static const ArrayX<S> empty;
    const Node& n = nodes_[v.id()];
    return n.grad.size() ? n.grad : empty;
  }

  /// Reverse sweep from a scalar loss. Parameter gradients are delivered to
  /// `sink` keyed by dense parameter index.
  void backward(Value<S> loss, GradAccumulator<S>& sink) {
    sweep(loss);
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.param_index >= 0 && n.grad.size() > 0) sink.add(n.param_index, n.grad);
    }
  }

  /// Reverse sweep accumulating parameter gradients directly into the store
  /// (store.grad must have been zeroed by the caller beforehand).
  void backward(Value<S> loss, ParameterStore<S>& store) {
    sweep(loss);
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.param_index >= 0 && n.grad.size() > 0)
        store.by_index(n.param_index).grad += n.grad;
    }
  }

 private:
  void sweep(Value<S> loss) {
    if (!recording_) throw UsageError("backward on a non-recording graph");
    if (loss.graph() != this) throw UsageError("backward: loss belongs to another graph");
    if (loss.size() != 1) throw UsageError("backward requires a scalar loss");
    Node& top = nodes_[loss.id()];
    if (!top.requires_grad) return;  // nothing reachable; all gradients stay zero
    accum(loss.id(), ArrayX<S>::Constant(1, S(1)));
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.size() == 0 || !n.back) continue;
      n.back(*this, n.grad);
      if (check_finite_ && !n.grad.allFinite())
        throw Error(std::string("non-finite gradient at op '") + n.op + "'");
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<int, int> param_nodes_;
  bool recording_;
  bool check_finite_;
};

template <typename S>
inline const TensorData<S>& Value<S>::data() const {
  return g_->val(id_);
}

template <typename S>
inline S Value<S>::scalar() const {
  const TensorData<S>& t = data();
  if (t.size() != 1) throw UsageError("scalar() on tensor of shape " + shape_str(t.shape));
  return t.v[0];
}

template <typename S>
inline bool Value<S>::requires_grad() const {
  return g_->rg(id_);
}

}  // namespace nmnd
