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

// LSTM cell as a single fused tape node. One step computes all four gates
// with two GEMV calls and emits a [2, dh] value holding the new hidden state
// (row 0) and cell state (row 1); the backward closure replays the gate
// activations saved at forward time.

#include <memory>
#include <vector>

#include "nmnd/ops.hpp"

namespace nmnd {
namespace ops {

/// Hidden/cell pair produced by one LSTM step.
template <typename S>
struct HC {
  Value<S> h;
  Value<S> c;
};

/// One LSTM step. Gate order inside the stacked weights is input, forget,
/// candidate, output: Wx is [4*dh, din], Wh is [4*dh, dh], b is [4*dh].
template <typename S>
HC<S> lstm_step(Value<S> x, Value<S> h_prev, Value<S> c_prev, Value<S> Wx, Value<S> Wh,
                Value<S> b) {
  Graph<S>& g = *x.graph();
  const int dh = static_cast<int>(h_prev.size());
  const int din = static_cast<int>(x.size());
  check_shape(c_prev.size() == dh, "lstm_step: h/c size mismatch");
  check_shape(Wx.shape().size() == 2 && Wx.shape()[0] == 4 * dh && Wx.shape()[1] == din,
              "lstm_step: Wx must be [4*dh, din], got " + shape_str(Wx.shape()));
  check_shape(Wh.shape().size() == 2 && Wh.shape()[0] == 4 * dh && Wh.shape()[1] == dh,
              "lstm_step: Wh must be [4*dh, dh], got " + shape_str(Wh.shape()));
  check_shape(b.size() == 4 * dh, "lstm_step: bias must have length 4*dh");

  Eigen::Matrix<S, Eigen::Dynamic, 1> z =
      Wx.data().mat() * x.data().vec() + Wh.data().mat() * h_prev.data().vec() + b.data().vec();
  Eigen::Map<ArrayX<S>> za(z.data(), z.size());
  auto sigm = [](const auto& t) { return ((t * S(0.5)).tanh() + S(1)) * S(0.5); };
  auto gates = std::make_shared<ArrayX<S>>(4 * dh);  // activated: i, f, g, o
  gates->segment(0, dh) = sigm(za.segment(0, dh));
  gates->segment(dh, dh) = sigm(za.segment(dh, dh));
  gates->segment(2 * dh, dh) = za.segment(2 * dh, dh).tanh();
  gates->segment(3 * dh, dh) = sigm(za.segment(3 * dh, dh));

  ArrayX<S> out(2 * dh);
  auto tc = std::make_shared<ArrayX<S>>(dh);
  {
    auto i = gates->segment(0, dh);
    auto f = gates->segment(dh, dh);
    auto gg = gates->segment(2 * dh, dh);
    auto o = gates->segment(3 * dh, dh);
    out.segment(dh, dh) = f * c_prev.array() + i * gg;  // c
    *tc = out.segment(dh, dh).tanh();
    out.segment(0, dh) = o * *tc;  // h
  }

  bool rg = g.recording() && (x.requires_grad() || h_prev.requires_grad() ||
                              c_prev.requires_grad() || Wx.requires_grad() ||
                              Wh.requires_grad() || b.requires_grad());
  int ix = x.id(), ih = h_prev.id(), ic = c_prev.id();
  int iWx = Wx.id(), iWh = Wh.id(), ib = b.id();
  if (!rg) {
    gates.reset();
    tc.reset();
  }
  Value<S> hc = g.add_node(
      "lstm_step", TensorData<S>(Shape{2, dh}, std::move(out)), rg,
      [ix, ih, ic, iWx, iWh, ib, dh, gates, tc](Graph<S>& gr, const ArrayX<S>& go) {
        auto i = gates->segment(0, dh);
        auto f = gates->segment(dh, dh);
        auto gg = gates->segment(2 * dh, dh);
        auto o = gates->segment(3 * dh, dh);
        auto gh = go.segment(0, dh);
        auto gc_out = go.segment(dh, dh);
        ArrayX<S> gc = gc_out + gh * o * (S(1) - tc->square());
        ArrayX<S> dz(4 * dh);
        dz.segment(0, dh) = gc * gg * i * (S(1) - i);
        dz.segment(dh, dh) = gc * gr.val(ic).v * f * (S(1) - f);
        dz.segment(2 * dh, dh) = gc * i * (S(1) - gg.square());
        dz.segment(3 * dh, dh) = gh * *tc * o * (S(1) - o);
        MapConstVec<S> dzv(dz.data(), dz.size());
        if (gr.rg(iWx)) {
          MatrixRM<S> gWx = dzv * gr.val(ix).vec().transpose();
          gr.accum(iWx, flat<S>(gWx));
        }
        if (gr.rg(iWh)) {
          MatrixRM<S> gWh = dzv * gr.val(ih).vec().transpose();
          gr.accum(iWh, flat<S>(gWh));
        }
        gr.accum(ib, dz);
        if (gr.rg(ix)) {
          Eigen::Matrix<S, Eigen::Dynamic, 1> gx = gr.val(iWx).mat().transpose() * dzv;
          gr.accum(ix, flat<S>(gx));
        }
        if (gr.rg(ih)) {
          Eigen::Matrix<S, Eigen::Dynamic, 1> ghp = gr.val(iWh).mat().transpose() * dzv;
          gr.accum(ih, flat<S>(ghp));
        }
        gr.accum(ic, gc * f);
      });
  return HC<S>{row(hc, 0), row(hc, 1)};
}

/// All per-step hidden states of an LSTM run over the rows of X [T, din],
/// starting from zero states.
template <typename S>
struct LstmTrace {
  std::vector<Value<S>> h;  // T entries, each [dh]
  Value<S> last_h;
  Value<S> last_c;
};

template <typename S>
LstmTrace<S> lstm_run(Value<S> X, Value<S> Wx, Value<S> Wh, Value<S> b, int dh) {
  Graph<S>& g = *X.graph();
  check_shape(X.shape().size() == 2, "lstm_run: X must be [T, din]");
  const int T = X.shape()[0];
  LstmTrace<S> trace;
  Value<S> h = g.constant(tensor_zeros<S>(Shape{dh}));
  Value<S> c = g.constant(tensor_zeros<S>(Shape{dh}));
  for (int t = 0; t < T; ++t) {
    HC<S> s = lstm_step(row(X, t), h, c, Wx, Wh, b);
    h = s.h;
    c = s.c;
    trace.h.push_back(h);
  }
  trace.last_h = h;
  trace.last_c = c;
  return trace;
}

}  // namespace ops
}  // namespace nmnd
