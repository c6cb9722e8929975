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

#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "nmnd/tensor.hpp"

namespace nmnd {

/// One named tensor owned by a ParameterStore. Non-trainable entries are
/// plain buffers (batch-norm running statistics); Adam skips them and the
/// graph never routes gradients to them.
template <typename S>
struct Parameter {
  std::string name;
  Shape shape;
  ArrayX<S> value;
  ArrayX<S> grad;
  ArrayX<S> m1, m2;  // Adam moment buffers, allocated with the parameter
  bool trainable = true;
  int index = -1;  // dense creation-order index, used by gradient sinks
};

/// Per-parameter gradient accumulator keyed by dense parameter index.
/// Workers fill one of these per work item; the trainer reduces them in a
/// fixed order so results do not depend on thread scheduling.
template <typename S>
struct GradAccumulator {
  std::vector<ArrayX<S>> slots;

  void ensure(int count) { slots.resize(count); }
  void add(int index, const ArrayX<S>& g) {
    if (static_cast<int>(slots.size()) <= index) slots.resize(index + 1);
    if (slots[index].size() == 0)
      slots[index] = g;
    else
      slots[index] += g;
  }
  void add_scaled(const GradAccumulator<S>& other, S scale) {
    if (slots.size() < other.slots.size()) slots.resize(other.slots.size());
    for (std::size_t i = 0; i < other.slots.size(); ++i) {
      if (other.slots[i].size() == 0) continue;
      if (slots[i].size() == 0)
        slots[i] = other.slots[i] * scale;
      else
        slots[i] += other.slots[i] * scale;
    }
  }
};

template <typename S>
class ParameterStore {
 public:
  Parameter<S>& create(std::string_view name, Shape shape, bool trainable = true) {
    std::string key(name);
    if (by_name_.count(key))
      throw UsageError("parameter '" + key + "' already exists");
    Parameter<S>& p = by_name_[key];
    p.name = key;
    p.shape = std::move(shape);
    std::int64_t n = numel(p.shape);
    p.value = ArrayX<S>::Zero(n);
    p.grad = ArrayX<S>::Zero(n);
    if (trainable) {
      p.m1 = ArrayX<S>::Zero(n);
      p.m2 = ArrayX<S>::Zero(n);
    }
    p.trainable = trainable;
    p.index = static_cast<int>(by_index_.size());
    by_index_.push_back(&p);
    return p;
  }

  bool contains(std::string_view name) const { return by_name_.count(std::string(name)) > 0; }

  Parameter<S>& at(std::string_view name) {
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) throw LookupError("no parameter named '" + std::string(name) + "'");
    return it->second;
  }
  const Parameter<S>& at(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) throw LookupError("no parameter named '" + std::string(name) + "'");
    return it->second;
  }

  int count() const { return static_cast<int>(by_index_.size()); }
  Parameter<S>& by_index(int i) { return *by_index_[i]; }
  const Parameter<S>& by_index(int i) const { return *by_index_[i]; }

  /// Lexicographic iteration (std::map order).
  auto begin() { return by_name_.begin(); }
  auto end() { return by_name_.end(); }
  auto begin() const { return by_name_.begin(); }
  auto end() const { return by_name_.end(); }

  std::int64_t total_values() const {
    std::int64_t n = 0;
    for (const auto& [k, p] : by_name_) n += p.value.size();
    return n;
  }
  std::int64_t total_trainable() const {
    std::int64_t n = 0;
    for (const auto& [k, p] : by_name_)
      if (p.trainable) n += p.value.size();
    return n;
  }

  void zero_grads() {
    for (auto& [k, p] : by_name_) p.grad.setZero();
  }

  void accumulate(const GradAccumulator<S>& acc) {
    for (std::size_t i = 0; i < acc.slots.size(); ++i) {
      if (acc.slots[i].size() == 0) continue;
      by_index_[i]->grad += acc.slots[i];
    }
  }

  /// Adam with per-component gradient clamping to [-clip, clip] applied
  /// before the moment updates. Missing (zero) gradients leave the
  /// parameter unchanged on a fresh state.
  void adam_step(S lr, S clip, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8)) {
    if (clip <= S(0)) throw DomainError("adam_step: clip must be positive");
    ++step_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(step_));
    for (auto& [k, p] : by_name_) {
      if (!p.trainable) continue;
      ArrayX<S> g = p.grad.min(clip).max(-clip);
      p.m1 = beta1 * p.m1 + (S(1) - beta1) * g;
      p.m2 = beta2 * p.m2 + (S(1) - beta2) * g.square();
      ArrayX<S> mhat = p.m1 / static_cast<S>(bc1);
      ArrayX<S> vhat = p.m2 / static_cast<S>(bc2);
      p.value -= lr * mhat / (vhat.sqrt() + eps);
      if (!p.value.allFinite())
        throw Error("adam_step produced a non-finite value in '" + k + "'");
    }
  }

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

 private:
  std::map<std::string, Parameter<S>> by_name_;
  std::vector<Parameter<S>*> by_index_;
  std::int64_t step_ = 0;
};

// ---- Initialization ----
// Dense/conv/LSTM weights: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
// Embedding tables: uniform(-0.08, 0.08). Each parameter consumes its own
// named stream so adding a parameter never shifts another's values.

template <typename S>
void init_fan_in(Parameter<S>& p, int fan_in, const Rng& rng) {
  S bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(fan_in)));
  RngStream s = rng.stream("init/" + p.name);
  for (std::int64_t i = 0; i < p.value.size(); ++i)
    p.value[i] = static_cast<S>(s.uniform(-bound, bound));
}

template <typename S>
void init_uniform(Parameter<S>& p, S lo, S hi, const Rng& rng) {
  RngStream s = rng.stream("init/" + p.name);
  for (std::int64_t i = 0; i < p.value.size(); ++i)
    p.value[i] = static_cast<S>(s.uniform(lo, hi));
}

template <typename S>
void init_constant(Parameter<S>& p, S value) {
  p.value.setConstant(value);
}

}  // namespace nmnd
