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

#include <Eigen/Dense>

#include <initializer_list>
#include <utility>

#include "nmnd/common.hpp"
#include "nmnd/rng.hpp"

namespace nmnd {

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

template <typename S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using MapMat = Eigen::Map<MatrixRM<S>>;

template <typename S>
using MapConstMat = Eigen::Map<const MatrixRM<S>>;

template <typename S>
using MapVec = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;

template <typename S>
using MapConstVec = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

/// Dense value: a flat row-major buffer plus its logical shape.
template <typename S>
struct TensorData {
  Shape shape;
  ArrayX<S> v;

  TensorData() = default;
  explicit TensorData(Shape s) : shape(std::move(s)) {
    v = ArrayX<S>::Zero(numel(shape));
  }
  TensorData(Shape s, ArrayX<S> values) : shape(std::move(s)), v(std::move(values)) {
    check_shape(numel(shape) == v.size(),
                "tensor data length " + std::to_string(v.size()) +
                    " does not match shape " + shape_str(shape));
  }

  std::int64_t size() const { return v.size(); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols_from(int dim) const {
    std::int64_t c = 1;
    for (std::size_t i = dim; i < shape.size(); ++i) c *= shape[i];
    return static_cast<int>(c);
  }

  /// Flat buffer viewed as a [shape[0], rest] row-major matrix.
  MapConstMat<S> mat() const {
    check_shape(!shape.empty(), "matrix view of a scalar");
    return MapConstMat<S>(v.data(), shape[0], cols_from(1));
  }
  MapMat<S> mat() {
    check_shape(!shape.empty(), "matrix view of a scalar");
    return MapMat<S>(v.data(), shape[0], cols_from(1));
  }

  MapConstVec<S> vec() const { return MapConstVec<S>(v.data(), v.size()); }
  MapVec<S> vec() { return MapVec<S>(v.data(), v.size()); }

  bool all_finite() const { return v.allFinite(); }
};

template <typename S>
TensorData<S> tensor_zeros(Shape s) {
  return TensorData<S>(std::move(s));
}

template <typename S>
TensorData<S> tensor_full(Shape s, S value) {
  TensorData<S> t(std::move(s));
  t.v.setConstant(value);
  return t;
}

template <typename S>
TensorData<S> tensor_of(Shape s, std::initializer_list<S> values) {
  TensorData<S> t(std::move(s));
  check_shape(static_cast<std::int64_t>(values.size()) == t.size(),
              "initializer length does not match shape");
  std::int64_t i = 0;
  for (S x : values) t.v[i++] = x;
  return t;
}

template <typename S>
TensorData<S> tensor_uniform(Shape s, S lo, S hi, RngStream& stream) {
  TensorData<S> t(std::move(s));
  for (std::int64_t i = 0; i < t.size(); ++i)
    t.v[i] = static_cast<S>(stream.uniform(static_cast<double>(lo), static_cast<double>(hi)));
  return t;
}

}  // namespace nmnd
