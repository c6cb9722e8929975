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

#include <string>

#include "nmnd/features.hpp"
#include "nmnd/graph.hpp"
#include "nmnd/ops.hpp"
#include "nmnd/ops_conv.hpp"
#include "nmnd/params.hpp"
#include "nmnd/rng.hpp"

namespace nmnd {

// Attention maps are [H', W'] tensors aligned to the visual feature grid;
// they are the raw (unbounded) outputs of Find/Relocate. Only Not and
// Exclude clamp their input into [0, 1] before complementing. Relocate and
// Describe project the incoming attention onto the simplex (positive part,
// L1) so their weighted feature sums are expectations.

/// Registers every module's parameters. `cells` is the flattened spatial
/// extent H'*W' the readout weights are sized for.
template <typename S>
void register_modules(ParameterStore<S>& store, const Rng& rng, int d_txt,
                      int d_map, int d_ctx, int cells) {
  auto dense = [&](const std::string& name, int rows, int cols) {
    Parameter<S>& p = store.create(name, Shape{rows, cols});
    init_fan_in(p, cols, rng);
  };
  auto conv1x1 = [&](const std::string& base, int out_ch, int in_ch) {
    Parameter<S>& w = store.create(base + ".w", Shape{out_ch, in_ch, 1, 1});
    init_fan_in(w, in_ch, rng);
    store.create(base + ".b", Shape{out_ch});
  };
  dense("mod.find.w_txt", kVisChannels, d_txt);
  conv1x1("mod.find.conv1", d_map, kVisChannels);
  conv1x1("mod.find.conv2", 1, d_map);

  dense("mod.relocate.w1", d_map, kVisChannels);
  dense("mod.relocate.w2", d_map, d_txt);
  conv1x1("mod.relocate.conv1", d_map, kVisChannels);
  conv1x1("mod.relocate.conv2", 1, d_map);

  dense("mod.exist.w", d_ctx, cells);
  store.create("mod.exist.b", Shape{d_ctx});

  dense("mod.describe.w1", d_ctx, d_ctx);
  dense("mod.describe.w2", d_ctx, kVisChannels);
  dense("mod.describe.w3", d_ctx, d_txt);

  dense("mod.count.w", d_ctx, cells + 2);
  store.create("mod.count.b", Shape{d_ctx});
}

/// Find: y = conv2(ReLU(conv1(x_vis (*) W x_txt))), both convolutions 1x1.
/// (*) multiplies every spatial position's channel vector elementwise.
template <typename S>
Value<S> module_find(Graph<S>& g, ParameterStore<S>& store, Value<S> x_vis,
                     Value<S> x_txt) {
  using namespace ops;
  Value<S> t = matvec(g.param(store, "mod.find.w_txt"), x_txt);
  Value<S> h = relu(conv2d(scale_rows(x_vis, t),
                           g.param(store, "mod.find.conv1.w"),
                           g.param(store, "mod.find.conv1.b")));
  Value<S> y = conv2d(h, g.param(store, "mod.find.conv2.w"),
                      g.param(store, "mod.find.conv2.b"));
  return reshape(y, Shape{x_vis.shape()[1], x_vis.shape()[2]});
}

/// Relocate: y~ = W1 sum(a (*) x_vis) over the simplex-projected a, then
/// y = conv2(ReLU(conv1(x_vis) (*) y~ (*) W2 x_txt)).
template <typename S>
Value<S> module_relocate(Graph<S>& g, ParameterStore<S>& store, Value<S> a,
                         Value<S> x_vis, Value<S> x_txt) {
  using namespace ops;
  const int fh = x_vis.shape()[1], fw = x_vis.shape()[2];
  Value<S> attended = matvec(reshape(x_vis, Shape{kVisChannels, fh * fw}),
                             reshape(normalize_mass(a), Shape{fh * fw}));
  Value<S> ytil = matvec(g.param(store, "mod.relocate.w1"), attended);
  Value<S> t2 = matvec(g.param(store, "mod.relocate.w2"), x_txt);
  Value<S> c1 = conv2d(x_vis, g.param(store, "mod.relocate.conv1.w"),
                       g.param(store, "mod.relocate.conv1.b"));
  Value<S> prod = scale_rows(scale_rows(c1, ytil), t2);
  Value<S> y = conv2d(relu(prod), g.param(store, "mod.relocate.conv2.w"),
                      g.param(store, "mod.relocate.conv2.b"));
  return reshape(y, Shape{fh, fw});
}

/// And: elementwise minimum.
template <typename S>
Value<S> module_and(Value<S> a1, Value<S> a2) {
  return ops::emin(a1, a2);
}

/// Or: elementwise maximum.
template <typename S>
Value<S> module_or(Value<S> a1, Value<S> a2) {
  return ops::emax(a1, a2);
}

/// Not: L1-normalized complement of the input clamped into [0, 1]. The
/// result is a distribution (nonnegative, sums to one); an all-ones input
/// complements to zero mass and falls back to uniform.
template <typename S>
Value<S> module_not(Value<S> a) {
  using namespace ops;
  return normalize_mass(add_const(neg(clamp(a, S(0), S(1))), S(1)));
}

/// Exclude: exactly And(Find(x_vis, x_txt), Not(a)) with Find's parameters.
template <typename S>
Value<S> module_exclude(Graph<S>& g, ParameterStore<S>& store, Value<S> a,
                        Value<S> x_vis, Value<S> x_txt) {
  return module_and(module_find(g, store, x_vis, x_txt), module_not<S>(a));
}

/// Exist: c = W vec(a) + b.
template <typename S>
Value<S> module_exist(Graph<S>& g, ParameterStore<S>& store, Value<S> a) {
  using namespace ops;
  return affine(g.param(store, "mod.exist.w"),
                reshape(a, Shape{static_cast<int>(a.size())}),
                g.param(store, "mod.exist.b"));
}

/// Describe: c = W1 (W2 sum(a (*) x_vis) (*) W3 x_txt) over the
/// simplex-projected a; no bias so a one-hot a reduces to the closed form.
template <typename S>
Value<S> module_describe(Graph<S>& g, ParameterStore<S>& store, Value<S> a,
                         Value<S> x_vis, Value<S> x_txt) {
  using namespace ops;
  const int fh = x_vis.shape()[1], fw = x_vis.shape()[2];
  Value<S> attended = matvec(reshape(x_vis, Shape{kVisChannels, fh * fw}),
                             reshape(normalize_mass(a), Shape{fh * fw}));
  Value<S> t1 = matvec(g.param(store, "mod.describe.w2"), attended);
  Value<S> t2 = matvec(g.param(store, "mod.describe.w3"), x_txt);
  return matvec(g.param(store, "mod.describe.w1"), mul(t1, t2));
}

/// Count: c = W [vec(a); max(a); min(a)] + b.
template <typename S>
Value<S> module_count(Graph<S>& g, ParameterStore<S>& store, Value<S> a) {
  using namespace ops;
  std::vector<Value<S>> parts = {reshape(a, Shape{static_cast<int>(a.size())}),
                                 max_all(a), min_all(a)};
  return affine(g.param(store, "mod.count.w"), concat(parts),
                g.param(store, "mod.count.b"));
}

}  // namespace nmnd
