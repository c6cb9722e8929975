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
#include <vector>

#include "nmnd/graph.hpp"
#include "nmnd/ops.hpp"
#include "nmnd/ops_conv.hpp"
#include "nmnd/params.hpp"
#include "nmnd/rng.hpp"

namespace nmnd {

/// Channel widths of the four convolution blocks.
inline constexpr int kCnnChannels[4] = {32, 32, 64, 64};
/// Visual feature channels handed to the modules: final conv width plus the
/// two coordinate planes.
inline constexpr int kVisChannels = kCnnChannels[3] + 2;

/// Spatial extent after one ceil-mode 2x2 pooling.
inline int pooled_extent(int n) { return (n + 1) / 2; }

/// Feature-grid extent after the four pooling stages.
inline int feature_extent(int image_extent) {
  int n = image_extent;
  for (int i = 0; i < 4; ++i) n = pooled_extent(n);
  return n;
}

/// Registers the convolutional trunk: four blocks of 3x3 convolution,
/// batch normalization, ReLU, and 2x2 max pooling. Running statistics are
/// stored as non-trainable parameters next to their gamma/beta.
template <typename S>
void register_cnn(ParameterStore<S>& store, const Rng& rng) {
  int in_ch = 3;
  for (int i = 0; i < 4; ++i) {
    const int out_ch = kCnnChannels[i];
    const std::string base = "cnn.block" + std::to_string(i);
    Parameter<S>& w =
        store.create(base + ".conv.w", Shape{out_ch, in_ch, 3, 3});
    init_fan_in(w, in_ch * 9, rng);
    store.create(base + ".conv.b", Shape{out_ch});
    Parameter<S>& gamma = store.create(base + ".bn.gamma", Shape{out_ch});
    init_constant(gamma, S(1));
    store.create(base + ".bn.beta", Shape{out_ch});
    store.create(base + ".bn.running_mean", Shape{out_ch},
                 /*trainable=*/false);
    Parameter<S>& rv =
        store.create(base + ".bn.running_var", Shape{out_ch}, false);
    init_constant(rv, S(1));
    in_ch = out_ch;
  }
}

/// The two coordinate planes appended to the CNN output: channel 0 holds the
/// column index and channel 1 the row index, each mapped linearly onto
/// [-1, 1] (a single cell maps to 0).
template <typename S>
TensorData<S> coord_channels(int h, int w) {
  TensorData<S> t(Shape{2, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      S cx = w > 1 ? S(-1) + S(2) * S(x) / S(w - 1) : S(0);
      S cy = h > 1 ? S(-1) + S(2) * S(y) / S(h - 1) : S(0);
      t.v[static_cast<std::int64_t>(y) * w + x] = cx;
      t.v[static_cast<std::int64_t>(h) * w + y * w + x] = cy;
    }
  return t;
}

/// Runs the trunk on one [3, H, W] image and appends the coordinate planes.
/// Output is [kVisChannels, H', W']. In training mode each block uses its
/// own batch statistics and reports them through `stats` (four entries) so
/// the trainer can maintain running averages; in inference mode the stored
/// running statistics are used.
template <typename S>
Value<S> cnn_features(Graph<S>& g, ParameterStore<S>& store, Value<S> image,
                      bool train,
                      std::vector<ops::BatchStats<S>>* stats = nullptr) {
  using namespace ops;
  Value<S> x = image;
  if (stats) stats->clear();
  for (int i = 0; i < 4; ++i) {
    const std::string base = "cnn.block" + std::to_string(i);
    Value<S> w = g.param(store, base + ".conv.w");
    Value<S> b = g.param(store, base + ".conv.b");
    Value<S> gamma = g.param(store, base + ".bn.gamma");
    Value<S> beta = g.param(store, base + ".bn.beta");
    x = conv2d(x, w, b);
    if (train) {
      BatchStats<S> bs;
      x = batchnorm_train(x, gamma, beta, &bs);
      if (stats) stats->push_back(std::move(bs));
    } else {
      x = batchnorm_eval(x, gamma, beta,
                         store.at(base + ".bn.running_mean").value,
                         store.at(base + ".bn.running_var").value);
    }
    x = maxpool2(relu(x));
  }
  const int fh = x.shape()[1], fw = x.shape()[2];
  Value<S> coords = g.constant(coord_channels<S>(fh, fw));
  std::vector<Value<S>> parts = {x, coords};
  return reshape(concat(parts), Shape{kVisChannels, fh, fw});
}

/// Folds fresh batch statistics into the stored running averages with the
/// given momentum (running = momentum * running + (1 - momentum) * batch).
template <typename S>
void update_running_stats(ParameterStore<S>& store,
                          const std::vector<ops::BatchStats<S>>& stats,
                          S momentum = S(0.9)) {
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const std::string base = "cnn.block" + std::to_string(i);
    Parameter<S>& rm = store.at(base + ".bn.running_mean");
    Parameter<S>& rv = store.at(base + ".bn.running_var");
    rm.value = momentum * rm.value + (S(1) - momentum) * stats[i].mean;
    rv.value = momentum * rv.value + (S(1) - momentum) * stats[i].var;
  }
}

}  // namespace nmnd
