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

// Differentiable operations over Graph values: elementwise arithmetic,
// reductions, dense linear maps, softmax/cross-entropy, embeddings, and the
// small composites the modules are built from. Every op computes its forward
// value eagerly with Eigen and registers a backward closure on the tape.

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "nmnd/graph.hpp"
#include "nmnd/tensor.hpp"

namespace nmnd {
namespace ops {

template <typename S>
inline Eigen::Map<const ArrayX<S>> flat(const MatrixRM<S>& m) {
  return Eigen::Map<const ArrayX<S>>(m.data(), m.size());
}

template <typename S>
inline Eigen::Map<const ArrayX<S>> flat(const Eigen::Matrix<S, Eigen::Dynamic, 1>& v) {
  return Eigen::Map<const ArrayX<S>>(v.data(), v.size());
}

/// Index of the first maximum (ties break toward the lower index).
template <typename S>
inline int argmax(const ArrayX<S>& a) {
  check_shape(a.size() > 0, "argmax of an empty array");
  int best = 0;
  for (int i = 1; i < static_cast<int>(a.size()); ++i)
    if (a[i] > a[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename S>
Value<S> add(Value<S> a, Value<S> b) {
  Graph<S>& g = *a.graph();
  check_shape(a.size() == b.size(), "add: size mismatch " + shape_str(a.shape()) + " vs " +
                                        shape_str(b.shape()));
  bool rg = g.recording() && (a.requires_grad() || b.requires_grad());
  int ia = a.id(), ib = b.id();
  return g.add_node("add", TensorData<S>(a.shape(), a.array() + b.array()), rg,
                    [ia, ib](Graph<S>& gr, const ArrayX<S>& go) {
                      gr.accum(ia, go);
                      gr.accum(ib, go);
                    });
}

template <typename S>
Value<S> sub(Value<S> a, Value<S> b) {
  Graph<S>& g = *a.graph();
  check_shape(a.size() == b.size(), "sub: size mismatch");
  bool rg = g.recording() && (a.requires_grad() || b.requires_grad());
  int ia = a.id(), ib = b.id();
  return g.add_node("sub", TensorData<S>(a.shape(), a.array() - b.array()), rg,
                    [ia, ib](Graph<S>& gr, const ArrayX<S>& go) {
                      gr.accum(ia, go);
                      gr.accum(ib, -go);
                    });
}

template <typename S>
Value<S> mul(Value<S> a, Value<S> b) {
  Graph<S>& g = *a.graph();
  check_shape(a.size() == b.size(), "mul: size mismatch " + shape_str(a.shape()) + " vs " +
                                        shape_str(b.shape()));
  bool rg = g.recording() && (a.requires_grad() || b.requires_grad());
  int ia = a.id(), ib = b.id();
  return g.add_node("mul", TensorData<S>(a.shape(), a.array() * b.array()), rg,
                    [ia, ib](Graph<S>& gr, const ArrayX<S>& go) {
                      gr.accum(ia, go * gr.val(ib).v);
                      gr.accum(ib, go * gr.val(ia).v);
                    });
}

template <typename S>
Value<S> neg(Value<S> a) {
  Graph<S>& g = *a.graph();
  bool rg = g.recording() && a.requires_grad();
  int ia = a.id();
  return g.add_node("neg", TensorData<S>(a.shape(), -a.array()), rg,
                    [ia](Graph<S>& gr, const ArrayX<S>& go) { gr.accum(ia, -go); });
}

template <typename S>
Value<S> scale(Value<S> a, S c) {
  Graph<S>& g = *a.graph();
  bool rg = g.recording() && a.requires_grad();
  int ia = a.id();
  return g.add_node("scale", TensorData<S>(a.shape(), a.array() * c), rg,
                    [ia, c](Graph<S>& gr, const ArrayX<S>& go) { gr.accum(ia, go * c); });
}

template <typename S>
Value<S> add_const(Value<S> a, S c) {
  Graph<S>& g = *a.graph();
  bool rg = g.recording() && a.requires_grad();
  int ia = a.id();
  return g.add_node("add_const", TensorData<S>(a.shape(), a.array() + c), rg,
                    [ia](Graph<S>& gr, const ArrayX<S>& go) { gr.accum(ia, go); });
}

/// Elementwise minimum; ties route the gradient to `a`.
template <typename S>
Value<S> emin(Value<S> a, Value<S> b) {
  Graph<S>& g = *a.graph();
  check_shape(a.size() == b.size(), "emin: size mismatch");
  bool rg = g.recording() && (a.requires_grad() || b.requires_grad());
  int ia = a.id(), ib = b.id();
  return g.add_node("emin", TensorData<S>(a.shape(), a.array().min(b.array())), rg,
                    [ia, ib](Graph<S>& gr, const ArrayX<S>& go) {
                      const ArrayX<S>& av = gr.val(ia).v;
                      const ArrayX<S>& bv = gr.val(ib).v;
                      ArrayX<S> take_a = (av <= bv).template cast<S>();
                      gr.accum(ia, go * take_a);
                      gr.accum(ib, go * (S(1) - take_a));
                    });
}

/// Elementwise maximum; ties route the gradient to `a`.
template <typename S>
Value<S> emax(Value<S> a, Value<S> b) {
  Graph<S>& g = *a.graph();
  check_shape(a.size() == b.size(), "emax: size mismatch");
  bool rg = g.recording() && (a.requires_grad() || b.requires_grad());
  int ia = a.id(), ib = b.id();
  return g.add_node("emax", TensorData<S>(a.shape(), a.array().max(b.array())), rg,
                    [ia, ib](Graph<S>& gr, const ArrayX<S>& go) {
                      const ArrayX<S>& av = gr.val(ia).v;
                      const ArrayX<S>& bv = gr.val(ib).v;
                      ArrayX<S> take_a = (av >= bv).template cast<S>();
                      gr.accum(ia, go * take_a);
                      gr.accum(ib, go * (S(1) - take_a));
                    });
}

template <typename S>
Value<S> relu(Value<S> a) {
  Graph<S>& g = *a.graph();
  bool rg = g.recording() && a.requires_grad();
  int ia = a.id();
  return g.add_node("relu", TensorData<S>(a.shape(), a.array().max(S(0))), rg,
                    [ia](Graph<S>& gr, const ArrayX<S>& go) {
                      gr.accum(ia, go * (gr.val(ia).v > S(0)).template cast<S>());
                    });
}

template <typename S>
Value<S> sigmoid(Value<S> a) {
  Graph<S>& g = *a.graph();
  // 0.5 * (1 + tanh(x/2)) is monotone and stable for large |x|.
  ArrayX<S> y = ((a.array() * S(0.5)).tanh() + S(1)) * S(0.5);
  bool rg = g.recording() && a.requires_grad();
  int ia = a.id();
  Value<S> out = g.add_node("sigmoid", TensorData<S>(a.shape(), std::move(y)), rg, nullptr);
  int io = out.id();
  g.set_back(io, [ia, io](Graph<S>& gr, const ArrayX<S>& go) {
    const ArrayX<S>& yv = gr.val(io).v;
    gr.accum(ia, go * yv * (S(1) - yv));
  });
  return out;
}

template <typename S>
Value<S> tanh_(Value<S> a) {
  Graph<S>& g = *a.graph();
  bool rg = g.recording() && a.requires_grad();
  int ia = a.id();
  Value<S> out = g.add_node("tanh", TensorData<S>(a.shape(), a.array().tanh()), rg, nullptr);
  int io = out.id();
  g.set_back(io, [ia, io](Graph<S>& gr, const ArrayX<S>& go) {
    const ArrayX<S>& yv = gr.val(io).v;
    gr.accum(ia, go * (S(1) - yv * yv));
  });
  return out;
}

template <typename S>
Value<S> log_(Value<S> a) {
  Graph<S>& g = *a.graph();
  if ((a.array() <= S(0)).any()) throw DomainError("log of a non-positive value");
  bool rg = g.recording() && a.requires_grad();
  int ia = a.id();
  return g.add_node("log", TensorData<S>(a.shape(), a.array().log()), rg,
                    [ia](Graph<S>& gr, const ArrayX<S>& go) {
                      gr.accum(ia, go / gr.val(ia).v);
                    });
}

/// Clamp to [lo, hi]; gradient passes through wherever the input was inside
/// the closed interval.
template <typename S>
Value<S> clamp(Value<S> a, S lo, S hi) {
  Graph<S>& g = *a.graph();
  bool rg = g.recording() && a.requires_grad();
  int ia = a.id();
  return g.add_node("clamp", TensorData<S>(a.shape(), a.array().max(lo).min(hi)), rg,
                    [ia, lo, hi](Graph<S>& gr, const ArrayX<S>& go) {
                      const ArrayX<S>& av = gr.val(ia).v;
                      gr.accum(ia, go * ((av >= lo) && (av <= hi)).template cast<S>());
                    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Value<S> sum(Value<S> a) {
  Graph<S>& g = *a.graph();
  bool rg = g.recording() && a.requires_grad();
  int ia = a.id();
  std::int64_t n = a.size();
  TensorData<S> out{Shape{}, ArrayX<S>::Constant(1, a.array().sum())};
  return g.add_node("sum", std::move(out), rg,
                    [ia, n](Graph<S>& gr, const ArrayX<S>& go) {
                      gr.accum(ia, ArrayX<S>::Constant(n, go[0]));
                    });
}

template <typename S>
Value<S> mean(Value<S> a) {
  Graph<S>& g = *a.graph();
  check_shape(a.size() > 0, "mean of an empty tensor");
  bool rg = g.recording() && a.requires_grad();
  int ia = a.id();
  std::int64_t n = a.size();
  TensorData<S> out{Shape{}, ArrayX<S>::Constant(1, a.array().mean())};
  return g.add_node("mean", std::move(out), rg,
                    [ia, n](Graph<S>& gr, const ArrayX<S>& go) {
                      gr.accum(ia, ArrayX<S>::Constant(n, go[0] / static_cast<S>(n)));
                    });
}

/// Maximum over all entries; the gradient flows to the first maximizer.
template <typename S>
Value<S> max_all(Value<S> a) {
  Graph<S>& g = *a.graph();
  int k = argmax(a.array());
  bool rg = g.recording() && a.requires_grad();
  int ia = a.id();
  std::int64_t n = a.size();
  TensorData<S> out{Shape{}, ArrayX<S>::Constant(1, a.item(k))};
  return g.add_node("max_all", std::move(out), rg,
                    [ia, n, k](Graph<S>& gr, const ArrayX<S>& go) {
                      ArrayX<S> gi = ArrayX<S>::Zero(n);
                      gi[k] = go[0];
                      gr.accum(ia, gi);
                    });
}

/// Minimum over all entries; the gradient flows to the first minimizer.
template <typename S>
Value<S> min_all(Value<S> a) {
  Graph<S>& g = *a.graph();
  int k = argmax<S>(-a.array());
  bool rg = g.recording() && a.requires_grad();
  int ia = a.id();
  std::int64_t n = a.size();
  TensorData<S> out{Shape{}, ArrayX<S>::Constant(1, a.item(k))};
  return g.add_node("min_all", std::move(out), rg,
                    [ia, n, k](Graph<S>& gr, const ArrayX<S>& go) {
                      ArrayX<S> gi = ArrayX<S>::Zero(n);
                      gi[k] = go[0];
                      gr.accum(ia, gi);
                    });
}

template <typename S>
Value<S> dot(Value<S> a, Value<S> b) {
  Graph<S>& g = *a.graph();
  check_shape(a.size() == b.size(), "dot: size mismatch");
  bool rg = g.recording() && (a.requires_grad() || b.requires_grad());
  int ia = a.id(), ib = b.id();
  TensorData<S> out{Shape{}, ArrayX<S>::Constant(1, (a.array() * b.array()).sum())};
  return g.add_node("dot", std::move(out), rg,
                    [ia, ib](Graph<S>& gr, const ArrayX<S>& go) {
                      gr.accum(ia, go[0] * gr.val(ib).v);
                      gr.accum(ib, go[0] * gr.val(ia).v);
                    });
}

/// Divide a tensor by a positive scalar node.
template <typename S>
Value<S> div_by_scalar(Value<S> a, Value<S> s) {
  Graph<S>& g = *a.graph();
  check_shape(s.size() == 1, "div_by_scalar: divisor must be a scalar");
  S sv = s.item(0);
  if (sv == S(0)) throw DomainError("div_by_scalar: division by zero");
  bool rg = g.recording() && (a.requires_grad() || s.requires_grad());
  int ia = a.id(), is = s.id();
  return g.add_node("div_by_scalar", TensorData<S>(a.shape(), a.array() / sv), rg,
                    [ia, is](Graph<S>& gr, const ArrayX<S>& go) {
                      S d = gr.val(is).v[0];
                      gr.accum(ia, go / d);
                      S gs = -(go * gr.val(ia).v).sum() / (d * d);
                      gr.accum(is, ArrayX<S>::Constant(1, gs));
                    });
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

template <typename S>
Value<S> reshape(Value<S> a, Shape s) {
  Graph<S>& g = *a.graph();
  check_shape(numel(s) == a.size(), "reshape: cannot view " + shape_str(a.shape()) + " as " +
                                        shape_str(s));
  bool rg = g.recording() && a.requires_grad();
  int ia = a.id();
  return g.add_node("reshape", TensorData<S>(std::move(s), a.array()), rg,
                    [ia](Graph<S>& gr, const ArrayX<S>& go) { gr.accum(ia, go); });
}

/// Concatenate flat tensors into one vector.
template <typename S>
Value<S> concat(const std::vector<Value<S>>& parts) {
  check_shape(!parts.empty(), "concat of zero tensors");
  Graph<S>& g = *parts[0].graph();
  std::int64_t total = 0;
  bool rg = false;
  for (const Value<S>& p : parts) {
    total += p.size();
    rg = rg || p.requires_grad();
  }
  rg = rg && g.recording();
  ArrayX<S> out(total);
  std::vector<int> ids;
  std::vector<std::int64_t> sizes;
  std::int64_t off = 0;
  for (const Value<S>& p : parts) {
    out.segment(off, p.size()) = p.array();
    off += p.size();
    ids.push_back(p.id());
    sizes.push_back(p.size());
  }
  return g.add_node("concat", TensorData<S>(Shape{static_cast<int>(total)}, std::move(out)), rg,
                    [ids, sizes](Graph<S>& gr, const ArrayX<S>& go) {
                      std::int64_t o = 0;
                      for (std::size_t i = 0; i < ids.size(); ++i) {
                        gr.accum(ids[i], go.segment(o, sizes[i]));
                        o += sizes[i];
                      }
                    });
}

template <typename S>
Value<S> concat(Value<S> a, Value<S> b) {
  return concat(std::vector<Value<S>>{a, b});
}

/// Extract row `i` of a [T, d] tensor as a vector of length d.
template <typename S>
Value<S> row(Value<S> x, int i) {
  Graph<S>& g = *x.graph();
  check_shape(x.shape().size() >= 2, "row: need a rank>=2 tensor, got " + shape_str(x.shape()));
  int T = x.shape()[0];
  std::int64_t d = x.size() / T;
  if (i < 0 || i >= T) throw UsageError("row index out of range");
  bool rg = g.recording() && x.requires_grad();
  int ix = x.id();
  ArrayX<S> out = x.array().segment(i * d, d);
  return g.add_node("row", TensorData<S>(Shape{static_cast<int>(d)}, std::move(out)), rg,
                    [ix, i, d, T](Graph<S>& gr, const ArrayX<S>& go) {
                      ArrayX<S> gi = ArrayX<S>::Zero(T * d);
                      gi.segment(i * d, d) = go;
                      gr.accum(ix, gi);
                    });
}

/// Stack equally sized vectors into a [T, d] tensor.
template <typename S>
Value<S> stack_rows(const std::vector<Value<S>>& rows) {
  check_shape(!rows.empty(), "stack_rows of zero rows");
  Graph<S>& g = *rows[0].graph();
  std::int64_t d = rows[0].size();
  bool rg = false;
  ArrayX<S> out(static_cast<std::int64_t>(rows.size()) * d);
  std::vector<int> ids;
  for (std::size_t t = 0; t < rows.size(); ++t) {
    check_shape(rows[t].size() == d, "stack_rows: ragged row sizes");
    out.segment(t * d, d) = rows[t].array();
    rg = rg || rows[t].requires_grad();
    ids.push_back(rows[t].id());
  }
  rg = rg && g.recording();
  Shape s{static_cast<int>(rows.size()), static_cast<int>(d)};
  return g.add_node("stack_rows", TensorData<S>(std::move(s), std::move(out)), rg,
                    [ids, d](Graph<S>& gr, const ArrayX<S>& go) {
                      for (std::size_t t = 0; t < ids.size(); ++t)
                        gr.accum(ids[t], go.segment(t * d, d));
                    });
}

// ---------------------------------------------------------------------------
// Dense linear maps
// ---------------------------------------------------------------------------

/// y = A x for A of shape [m, n] and x of length n.
template <typename S>
Value<S> matvec(Value<S> A, Value<S> x) {
  Graph<S>& g = *A.graph();
  check_shape(A.shape().size() == 2, "matvec: A must be rank 2");
  int m = A.shape()[0], n = A.shape()[1];
  check_shape(x.size() == n, "matvec: A is " + shape_str(A.shape()) + " but x has length " +
                                 std::to_string(x.size()));
  Eigen::Matrix<S, Eigen::Dynamic, 1> y = A.data().mat() * x.data().vec();
  bool rg = g.recording() && (A.requires_grad() || x.requires_grad());
  int iA = A.id(), ix = x.id();
  return g.add_node("matvec", TensorData<S>(Shape{m}, flat<S>(y)), rg,
                    [iA, ix, m, n](Graph<S>& gr, const ArrayX<S>& go) {
                      MapConstVec<S> gov(go.data(), m);
                      if (gr.rg(iA)) {
                        MatrixRM<S> gA = gov * gr.val(ix).vec().transpose();
                        gr.accum(iA, flat<S>(gA));
                      }
                      if (gr.rg(ix)) {
                        Eigen::Matrix<S, Eigen::Dynamic, 1> gx =
                            gr.val(iA).mat().transpose() * gov;
                        gr.accum(ix, flat<S>(gx));
                      }
                    });
}

/// y = W x + b.
template <typename S>
Value<S> affine(Value<S> W, Value<S> x, Value<S> b) {
  return add(matvec(W, x), b);
}

/// Y = X W^T + 1 b^T for X of shape [T, n], W of shape [m, n], b of length m.
template <typename S>
Value<S> rows_affine(Value<S> X, Value<S> W, Value<S> b) {
  Graph<S>& g = *X.graph();
  check_shape(X.shape().size() >= 2 && W.shape().size() == 2, "rows_affine: rank mismatch");
  int T = X.shape()[0];
  int n = static_cast<int>(X.size() / T);
  int m = W.shape()[0];
  check_shape(W.shape()[1] == n, "rows_affine: W is " + shape_str(W.shape()) +
                                     " but rows have length " + std::to_string(n));
  check_shape(b.size() == m, "rows_affine: bias length mismatch");
  MapConstMat<S> Xm(X.array().data(), T, n);
  MatrixRM<S> Y = Xm * W.data().mat().transpose();
  Y.rowwise() += b.data().vec().transpose();
  bool rg = g.recording() && (X.requires_grad() || W.requires_grad() || b.requires_grad());
  int iX = X.id(), iW = W.id(), ib = b.id();
  return g.add_node("rows_affine", TensorData<S>(Shape{T, m}, flat<S>(Y)), rg,
                    [iX, iW, ib, T, n, m](Graph<S>& gr, const ArrayX<S>& go) {
                      MapConstMat<S> G(go.data(), T, m);
                      MapConstMat<S> Xm(gr.val(iX).v.data(), T, n);
                      MapConstMat<S> Wm(gr.val(iW).v.data(), m, n);
                      if (gr.rg(iX)) {
                        MatrixRM<S> gX = G * Wm;
                        gr.accum(iX, flat<S>(gX));
                      }
                      if (gr.rg(iW)) {
                        MatrixRM<S> gW = G.transpose() * Xm;
                        gr.accum(iW, flat<S>(gW));
                      }
                      if (gr.rg(ib)) {
                        Eigen::Matrix<S, Eigen::Dynamic, 1> gb = G.colwise().sum().transpose();
                        gr.accum(ib, flat<S>(gb));
                      }
                    });
}

/// Y[t, :] = X[t, :] + r for X of shape [T, d].
template <typename S>
Value<S> add_row_broadcast(Value<S> X, Value<S> r) {
  Graph<S>& g = *X.graph();
  int T = X.shape()[0];
  int d = static_cast<int>(X.size() / T);
  check_shape(r.size() == d, "add_row_broadcast: length mismatch");
  MatrixRM<S> Y = MapConstMat<S>(X.array().data(), T, d);
  Y.rowwise() += r.data().vec().transpose();
  bool rg = g.recording() && (X.requires_grad() || r.requires_grad());
  int iX = X.id(), ir = r.id();
  return g.add_node("add_row_broadcast", TensorData<S>(X.shape(), flat<S>(Y)), rg,
                    [iX, ir, T, d](Graph<S>& gr, const ArrayX<S>& go) {
                      gr.accum(iX, go);
                      if (gr.rg(ir)) {
                        MapConstMat<S> G(go.data(), T, d);
                        Eigen::Matrix<S, Eigen::Dynamic, 1> grr = G.colwise().sum().transpose();
                        gr.accum(ir, flat<S>(grr));
                      }
                    });
}

/// y = X^T w: weighted sum of the rows of X [T, d] with weights w [T].
template <typename S>
Value<S> weighted_rowsum(Value<S> X, Value<S> w) {
  Graph<S>& g = *X.graph();
  int T = X.shape()[0];
  int d = static_cast<int>(X.size() / T);
  check_shape(w.size() == T, "weighted_rowsum: weight length mismatch");
  Eigen::Matrix<S, Eigen::Dynamic, 1> y =
      MapConstMat<S>(X.array().data(), T, d).transpose() * w.data().vec();
  bool rg = g.recording() && (X.requires_grad() || w.requires_grad());
  int iX = X.id(), iw = w.id();
  return g.add_node("weighted_rowsum", TensorData<S>(Shape{d}, flat<S>(y)), rg,
                    [iX, iw, T, d](Graph<S>& gr, const ArrayX<S>& go) {
                      MapConstVec<S> gov(go.data(), d);
                      if (gr.rg(iX)) {
                        MatrixRM<S> gX = gr.val(iw).vec() * gov.transpose();
                        gr.accum(iX, flat<S>(gX));
                      }
                      if (gr.rg(iw)) {
                        Eigen::Matrix<S, Eigen::Dynamic, 1> gw =
                            MapConstMat<S>(gr.val(iX).v.data(), T, d) * gov;
                        gr.accum(iw, flat<S>(gw));
                      }
                    });
}

/// Y[c, :] = s[c] * X[c, :] for X of shape [C, ...].
template <typename S>
Value<S> scale_rows(Value<S> X, Value<S> s) {
  Graph<S>& g = *X.graph();
  int C = X.shape()[0];
  std::int64_t N = X.size() / C;
  check_shape(s.size() == C, "scale_rows: scale length mismatch");
  ArrayX<S> out(X.size());
  for (int c = 0; c < C; ++c) out.segment(c * N, N) = X.array().segment(c * N, N) * s.item(c);
  bool rg = g.recording() && (X.requires_grad() || s.requires_grad());
  int iX = X.id(), is = s.id();
  return g.add_node("scale_rows", TensorData<S>(X.shape(), std::move(out)), rg,
                    [iX, is, C, N](Graph<S>& gr, const ArrayX<S>& go) {
                      const ArrayX<S>& Xv = gr.val(iX).v;
                      const ArrayX<S>& sv = gr.val(is).v;
                      if (gr.rg(iX)) {
                        ArrayX<S> gX(Xv.size());
                        for (int c = 0; c < C; ++c)
                          gX.segment(c * N, N) = go.segment(c * N, N) * sv[c];
                        gr.accum(iX, gX);
                      }
                      if (gr.rg(is)) {
                        ArrayX<S> gs(C);
                        for (int c = 0; c < C; ++c)
                          gs[c] = (go.segment(c * N, N) * Xv.segment(c * N, N)).sum();
                        gr.accum(is, gs);
                      }
                    });
}

// ---------------------------------------------------------------------------
// Softmax and losses
// ---------------------------------------------------------------------------

template <typename S>
inline ArrayX<S> softmax_values(const ArrayX<S>& z) {
  ArrayX<S> y = (z - z.maxCoeff()).exp();
  return y / y.sum();
}

template <typename S>
Value<S> softmax(Value<S> z) {
  Graph<S>& g = *z.graph();
  if (z.size() == 0) throw DomainError("softmax of an empty tensor");
  bool rg = g.recording() && z.requires_grad();
  int iz = z.id();
  Value<S> out =
      g.add_node("softmax", TensorData<S>(z.shape(), softmax_values<S>(z.array())), rg, nullptr);
  int io = out.id();
  g.set_back(io, [iz, io](Graph<S>& gr, const ArrayX<S>& go) {
    const ArrayX<S>& y = gr.val(io).v;
    S inner = (go * y).sum();
    gr.accum(iz, y * (go - inner));
  });
  return out;
}

/// Softmax restricted to positions where mask is nonzero; masked-out entries
/// of the output are exactly zero. At least one position must be allowed.
template <typename S>
Value<S> masked_softmax(Value<S> z, std::shared_ptr<const std::vector<char>> mask) {
  Graph<S>& g = *z.graph();
  check_shape(static_cast<std::int64_t>(mask->size()) == z.size(),
              "masked_softmax: mask length mismatch");
  S mx = std::numeric_limits<S>::lowest();
  bool any = false;
  for (std::int64_t i = 0; i < z.size(); ++i)
    if ((*mask)[i]) {
      any = true;
      mx = std::max(mx, z.item(i));
    }
  if (!any) throw DomainError("masked_softmax: empty mask");
  ArrayX<S> y = ArrayX<S>::Zero(z.size());
  S total = S(0);
  for (std::int64_t i = 0; i < z.size(); ++i)
    if ((*mask)[i]) {
      y[i] = std::exp(z.item(i) - mx);
      total += y[i];
    }
  y /= total;
  bool rg = g.recording() && z.requires_grad();
  int iz = z.id();
  Value<S> out = g.add_node("masked_softmax", TensorData<S>(z.shape(), std::move(y)), rg, nullptr);
  int io = out.id();
  g.set_back(io, [iz, io](Graph<S>& gr, const ArrayX<S>& go) {
    const ArrayX<S>& yv = gr.val(io).v;  // zero off-mask, so the usual formula applies
    S inner = (go * yv).sum();
    gr.accum(iz, yv * (go - inner));
  });
  return out;
}

template <typename S>
inline S logsumexp_values(const ArrayX<S>& z) {
  S mx = z.maxCoeff();
  return mx + std::log((z - mx).exp().sum());
}

/// Negative log-likelihood of class `target` under softmax(logits).
template <typename S>
Value<S> nll_logits(Value<S> logits, int target) {
  Graph<S>& g = *logits.graph();
  check_shape(target >= 0 && target < logits.size(), "nll_logits: target out of range");
  S loss = logsumexp_values<S>(logits.array()) - logits.item(target);
  bool rg = g.recording() && logits.requires_grad();
  int iz = logits.id();
  TensorData<S> out{Shape{}, ArrayX<S>::Constant(1, loss)};
  return g.add_node("nll_logits", std::move(out), rg,
                    [iz, target](Graph<S>& gr, const ArrayX<S>& go) {
                      ArrayX<S> p = softmax_values<S>(gr.val(iz).v);
                      p[target] -= S(1);
                      gr.accum(iz, go[0] * p);
                    });
}

/// p[i] as a scalar value.
template <typename S>
Value<S> pick(Value<S> p, int i) {
  Graph<S>& g = *p.graph();
  check_shape(i >= 0 && i < p.size(), "pick: index out of range");
  bool rg = g.recording() && p.requires_grad();
  int ip = p.id();
  std::int64_t n = p.size();
  TensorData<S> out{Shape{}, ArrayX<S>::Constant(1, p.item(i))};
  return g.add_node("pick", std::move(out), rg,
                    [ip, i, n](Graph<S>& gr, const ArrayX<S>& go) {
                      ArrayX<S> gi = ArrayX<S>::Zero(n);
                      gi[i] = go[0];
                      gr.accum(ip, gi);
                    });
}

/// Negative log-likelihood restricted to unmasked classes. The target must
/// itself be unmasked.
template <typename S>
Value<S> masked_nll_logits(Value<S> logits, std::shared_ptr<const std::vector<char>> mask,
                           int target) {
  check_shape(target >= 0 && target < logits.size(), "masked_nll_logits: target out of range");
  if (!(*mask)[target]) throw DomainError("masked_nll_logits: target class is masked out");
  Value<S> p = masked_softmax(logits, std::move(mask));
  return neg(log_(pick(p, target)));  // p[target] > 0 because the target is unmasked
}

/// Cross-entropy of logits against a fixed probability vector q (sums to 1):
/// logsumexp(z) - q . z.
template <typename S>
Value<S> ce_fixed_target(Value<S> logits, std::shared_ptr<const ArrayX<S>> q) {
  Graph<S>& g = *logits.graph();
  check_shape(q->size() == logits.size(), "ce_fixed_target: target length mismatch");
  S loss = logsumexp_values<S>(logits.array()) - (logits.array() * (*q)).sum();
  bool rg = g.recording() && logits.requires_grad();
  int iz = logits.id();
  TensorData<S> out{Shape{}, ArrayX<S>::Constant(1, loss)};
  return g.add_node("ce_fixed_target", std::move(out), rg,
                    [iz, q](Graph<S>& gr, const ArrayX<S>& go) {
                      ArrayX<S> p = softmax_values<S>(gr.val(iz).v);
                      gr.accum(iz, go[0] * (p - *q));
                    });
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

/// Row `id` of an embedding table [V, d].
template <typename S>
Value<S> embedding_row(Value<S> table, int id) {
  return row(table, id);
}

/// Rows `ids` of an embedding table [V, d], stacked into [T, d].
template <typename S>
Value<S> embedding_rows(Value<S> table, const std::vector<int>& ids) {
  Graph<S>& g = *table.graph();
  check_shape(table.shape().size() == 2, "embedding_rows: table must be rank 2");
  int V = table.shape()[0], d = table.shape()[1];
  int T = static_cast<int>(ids.size());
  check_shape(T > 0, "embedding_rows: empty id list");
  ArrayX<S> out(static_cast<std::int64_t>(T) * d);
  for (int t = 0; t < T; ++t) {
    int id = ids[t];
    if (id < 0 || id >= V) throw LookupError("embedding id " + std::to_string(id) + " out of range");
    out.segment(static_cast<std::int64_t>(t) * d, d) = table.array().segment(static_cast<std::int64_t>(id) * d, d);
  }
  bool rg = g.recording() && table.requires_grad();
  int it = table.id();
  auto idv = std::make_shared<std::vector<int>>(ids);
  return g.add_node("embedding_rows", TensorData<S>(Shape{T, d}, std::move(out)), rg,
                    [it, idv, V, d](Graph<S>& gr, const ArrayX<S>& go) {
                      ArrayX<S> gt = ArrayX<S>::Zero(static_cast<std::int64_t>(V) * d);
                      for (std::size_t t = 0; t < idv->size(); ++t)
                        gt.segment(static_cast<std::int64_t>((*idv)[t]) * d, d) +=
                            go.segment(static_cast<std::int64_t>(t) * d, d);
                      gr.accum(it, gt);
                    });
}

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

/// Two-layer perceptron: W2 relu(W1 x + b1) + b2.
template <typename S>
Value<S> mlp2(Value<S> x, Value<S> W1, Value<S> b1, Value<S> W2, Value<S> b2) {
  return affine(W2, relu(affine(W1, x, b1)), b2);
}

/// Project onto the probability simplex by taking the positive part and
/// dividing by its mass; an all-nonpositive input maps to the uniform
/// distribution. Exact on inputs that are already normalized attention.
template <typename S>
Value<S> normalize_mass(Value<S> a) {
  Graph<S>& g = *a.graph();
  Value<S> r = relu(a);
  S total = r.array().sum();
  if (total > S(0)) return div_by_scalar(r, sum(r));
  std::int64_t n = a.size();
  return g.constant(tensor_full<S>(a.shape(), S(1) / static_cast<S>(n)));
}

}  // namespace ops
}  // namespace nmnd
