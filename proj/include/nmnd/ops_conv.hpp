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

// Spatial ops on [C, H, W] tensors: same-padded convolution via im2col and a
// single GEMM, 2x2/stride-2 max pooling with ceil-mode output sizes, and
// batch normalization over the spatial positions of each channel.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>
#include <vector>

#include "nmnd/ops.hpp"

namespace nmnd {
namespace ops {

/// Gather map for im2col: entry (ck, o) is the flat input index feeding
/// patch-row ck at output position o, or -1 for padding. Cached per
/// geometry; safe to share across threads once built.
inline std::shared_ptr<const std::vector<std::int32_t>> im2col_map(int C, int H, int W, int kh,
                                                                   int kw) {
  using Key = std::tuple<int, int, int, int, int>;
  static std::mutex mu;
  static std::map<Key, std::shared_ptr<const std::vector<std::int32_t>>> cache;
  Key key{C, H, W, kh, kw};
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  const int ph = kh / 2, pw = kw / 2;
  const std::int64_t CK = static_cast<std::int64_t>(C) * kh * kw;
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
  auto map = std::make_shared<std::vector<std::int32_t>>(CK * HW);
  std::int64_t ck = 0;
  for (int c = 0; c < C; ++c)
    for (int dy = 0; dy < kh; ++dy)
      for (int dx = 0; dx < kw; ++dx, ++ck) {
        std::int32_t* dst = map->data() + ck * HW;
        for (int y = 0; y < H; ++y) {
          int sy = y + dy - ph;
          for (int x = 0; x < W; ++x) {
            int sx = x + dx - pw;
            bool in = sy >= 0 && sy < H && sx >= 0 && sx < W;
            dst[y * W + x] =
                in ? static_cast<std::int32_t>((static_cast<std::int64_t>(c) * H + sy) * W + sx)
                   : -1;
          }
        }
      }
  cache.emplace(key, map);
  return map;
}

/// Same-padded 2-D convolution: input [C, H, W], kernel [K, C, kh, kw] with
/// odd kh/kw, bias [K]; output [K, H, W].
template <typename S>
Value<S> conv2d(Value<S> input, Value<S> kernel, Value<S> bias) {
  Graph<S>& g = *input.graph();
  check_shape(input.shape().size() == 3, "conv2d: input must be [C, H, W], got " +
                                             shape_str(input.shape()));
  check_shape(kernel.shape().size() == 4, "conv2d: kernel must be [K, C, kh, kw]");
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  const int K = kernel.shape()[0], kh = kernel.shape()[2], kw = kernel.shape()[3];
  check_shape(kernel.shape()[1] == C, "conv2d: kernel expects " +
                                          std::to_string(kernel.shape()[1]) +
                                          " input channels, got " + std::to_string(C));
  check_shape(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel size must be odd for same padding");
  check_shape(bias.size() == K, "conv2d: bias length mismatch");

  auto map = im2col_map(C, H, W, kh, kw);
  const std::int64_t CK = static_cast<std::int64_t>(C) * kh * kw;
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;

  auto cols = std::make_shared<MatrixRM<S>>(CK, HW);
  {
    const S* in = input.array().data();
    S* dst = cols->data();
    const std::int32_t* idx = map->data();
    for (std::int64_t i = 0; i < CK * HW; ++i) dst[i] = idx[i] >= 0 ? in[idx[i]] : S(0);
  }
  MatrixRM<S> Y = kernel.data().mat() * *cols;  // [K, HW]
  Y.colwise() += bias.data().vec();

  bool rg = g.recording() &&
            (input.requires_grad() || kernel.requires_grad() || bias.requires_grad());
  int ii = input.id(), ik = kernel.id(), ib = bias.id();
  if (!rg) cols.reset();
  return g.add_node(
      "conv2d", TensorData<S>(Shape{K, H, W}, flat<S>(Y)), rg,
      [ii, ik, ib, K, CK, HW, cols, map](Graph<S>& gr, const ArrayX<S>& go) {
        MapConstMat<S> G(go.data(), K, HW);
        if (gr.rg(ib)) {
          Eigen::Matrix<S, Eigen::Dynamic, 1> gb = G.rowwise().sum();
          gr.accum(ib, flat<S>(gb));
        }
        if (gr.rg(ik)) {
          MatrixRM<S> gK = G * cols->transpose();  // [K, CK]
          gr.accum(ik, flat<S>(gK));
        }
        if (gr.rg(ii)) {
          MatrixRM<S> gcols = gr.val(ik).mat().transpose() * G;  // [CK, HW]
          ArrayX<S> gin = ArrayX<S>::Zero(gr.val(ii).size());
          const std::int32_t* idx = map->data();
          const S* src = gcols.data();
          S* dst = gin.data();
          for (std::int64_t i = 0; i < CK * HW; ++i)
            if (idx[i] >= 0) dst[idx[i]] += src[i];
          gr.accum(ii, gin);
        }
      });
}

/// 2x2 max pooling with stride 2; partial windows at the right/bottom edges
/// are kept (ceil-mode output sizes). Gradient flows to the first maximum in
/// each window (row-major scan order).
template <typename S>
Value<S> maxpool2(Value<S> input) {
  Graph<S>& g = *input.graph();
  check_shape(input.shape().size() == 3, "maxpool2: input must be [C, H, W]");
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  const int OH = (H + 1) / 2, OW = (W + 1) / 2;
  ArrayX<S> out(static_cast<std::int64_t>(C) * OH * OW);
  auto arg = std::make_shared<std::vector<std::int32_t>>(out.size());
  const S* in = input.array().data();
  std::int64_t o = 0;
  for (int c = 0; c < C; ++c) {
    const S* plane = in + static_cast<std::int64_t>(c) * H * W;
    for (int y = 0; y < OH; ++y)
      for (int x = 0; x < OW; ++x, ++o) {
        int y0 = 2 * y, x0 = 2 * x;
        int y1 = std::min(y0 + 2, H), x1 = std::min(x0 + 2, W);
        S best = plane[y0 * W + x0];
        int bidx = y0 * W + x0;
        for (int yy = y0; yy < y1; ++yy)
          for (int xx = x0; xx < x1; ++xx) {
            S v = plane[yy * W + xx];
            if (v > best) {
              best = v;
              bidx = yy * W + xx;
            }
          }
        out[o] = best;
        (*arg)[o] = static_cast<std::int32_t>(static_cast<std::int64_t>(c) * H * W + bidx);
      }
  }
  bool rg = g.recording() && input.requires_grad();
  int ii = input.id();
  std::int64_t n_in = input.size();
  return g.add_node("maxpool2", TensorData<S>(Shape{C, OH, OW}, std::move(out)), rg,
                    [ii, arg, n_in](Graph<S>& gr, const ArrayX<S>& go) {
                      ArrayX<S> gin = ArrayX<S>::Zero(n_in);
                      for (std::int64_t i = 0; i < go.size(); ++i) gin[(*arg)[i]] += go[i];
                      gr.accum(ii, gin);
                    });
}

/// Per-channel batch statistics of a [C, ...] tensor (mean and biased
/// variance over the trailing dimensions).
template <typename S>
struct BatchStats {
  ArrayX<S> mean;
  ArrayX<S> var;
};

/// Batch normalization in training mode: normalizes each channel by the
/// statistics of its own spatial positions, then applies the affine
/// gamma/beta. Batch statistics are reported through `stats` so the caller
/// can maintain running averages for inference.
template <typename S>
Value<S> batchnorm_train(Value<S> x, Value<S> gamma, Value<S> beta,
                         BatchStats<S>* stats = nullptr, S eps = S(1e-5)) {
  Graph<S>& g = *x.graph();
  check_shape(!x.shape().empty(), "batchnorm: input must have a channel dimension");
  const int C = x.shape()[0];
  const std::int64_t N = x.size() / C;
  check_shape(N >= 1, "batchnorm: empty channels");
  check_shape(gamma.size() == C && beta.size() == C, "batchnorm: gamma/beta length mismatch");
  ArrayX<S> mean(C), var(C), invstd(C);
  auto xhat = std::make_shared<ArrayX<S>>(x.size());
  for (int c = 0; c < C; ++c) {
    auto seg = x.array().segment(c * N, N);
    mean[c] = seg.mean();
    var[c] = (seg - mean[c]).square().sum() / static_cast<S>(N);
    invstd[c] = S(1) / std::sqrt(var[c] + eps);
    xhat->segment(c * N, N) = (seg - mean[c]) * invstd[c];
  }
  ArrayX<S> out(x.size());
  for (int c = 0; c < C; ++c)
    out.segment(c * N, N) = xhat->segment(c * N, N) * gamma.item(c) + beta.item(c);
  if (stats) {
    stats->mean = mean;
    stats->var = var;
  }
  bool rg = g.recording() &&
            (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  int ix = x.id(), ig = gamma.id(), ibt = beta.id();
  auto istd = std::make_shared<ArrayX<S>>(std::move(invstd));
  if (!rg) {
    xhat.reset();
    istd.reset();
  }
  return g.add_node(
      "batchnorm", TensorData<S>(x.shape(), std::move(out)), rg,
      [ix, ig, ibt, C, N, xhat, istd](Graph<S>& gr, const ArrayX<S>& go) {
        const ArrayX<S>& gv = gr.val(ig).v;
        ArrayX<S> dgamma(C), dbeta(C);
        for (int c = 0; c < C; ++c) {
          auto gseg = go.segment(c * N, N);
          auto hseg = xhat->segment(c * N, N);
          dgamma[c] = (gseg * hseg).sum();
          dbeta[c] = gseg.sum();
        }
        if (gr.rg(ig)) gr.accum(ig, dgamma);
        if (gr.rg(ibt)) gr.accum(ibt, dbeta);
        if (gr.rg(ix)) {
          ArrayX<S> gx(go.size());
          for (int c = 0; c < C; ++c) {
            auto gseg = go.segment(c * N, N);
            auto hseg = xhat->segment(c * N, N);
            // d xhat = g * gamma; dx folds in the mean/variance paths.
            gx.segment(c * N, N) =
                (gv[c] * (*istd)[c] / static_cast<S>(N)) *
                (static_cast<S>(N) * gseg - dbeta[c] - hseg * dgamma[c]);
          }
          gr.accum(ix, gx);
        }
      });
}

/// Batch normalization in inference mode, using fixed running statistics.
template <typename S>
Value<S> batchnorm_eval(Value<S> x, Value<S> gamma, Value<S> beta, const ArrayX<S>& running_mean,
                        const ArrayX<S>& running_var, S eps = S(1e-5)) {
  Graph<S>& g = *x.graph();
  const int C = x.shape()[0];
  const std::int64_t N = x.size() / C;
  check_shape(gamma.size() == C && beta.size() == C, "batchnorm: gamma/beta length mismatch");
  check_shape(running_mean.size() == C && running_var.size() == C,
              "batchnorm: running statistics length mismatch");
  auto istd = std::make_shared<ArrayX<S>>((running_var + eps).sqrt().inverse());
  auto xhat = std::make_shared<ArrayX<S>>(x.size());
  ArrayX<S> out(x.size());
  for (int c = 0; c < C; ++c) {
    auto seg = x.array().segment(c * N, N);
    xhat->segment(c * N, N) = (seg - running_mean[c]) * (*istd)[c];
    out.segment(c * N, N) = xhat->segment(c * N, N) * gamma.item(c) + beta.item(c);
  }
  bool rg = g.recording() &&
            (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  int ix = x.id(), ig = gamma.id(), ibt = beta.id();
  if (!rg) {
    xhat.reset();
    istd.reset();
  }
  return g.add_node("batchnorm_eval", TensorData<S>(x.shape(), std::move(out)), rg,
                    [ix, ig, ibt, C, N, xhat, istd](Graph<S>& gr, const ArrayX<S>& go) {
                      const ArrayX<S>& gv = gr.val(ig).v;
                      ArrayX<S> dgamma(C), dbeta(C);
                      for (int c = 0; c < C; ++c) {
                        auto gseg = go.segment(c * N, N);
                        dgamma[c] = (gseg * xhat->segment(c * N, N)).sum();
                        dbeta[c] = gseg.sum();
                      }
                      if (gr.rg(ig)) gr.accum(ig, dgamma);
                      if (gr.rg(ibt)) gr.accum(ibt, dbeta);
                      if (gr.rg(ix)) {
                        ArrayX<S> gx(go.size());
                        for (int c = 0; c < C; ++c)
                          gx.segment(c * N, N) = go.segment(c * N, N) * gv[c] * (*istd)[c];
                        gr.accum(ix, gx);
                      }
                    });
}

}  // namespace ops
}  // namespace nmnd
