// Copyright 2026 The milkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Row-major-batch primitives: every activation matrix holds one instance
// (or token) per row. Weights follow the (out, in) convention and biases are
// (out, 1) columns. Backward functions accumulate into parameter gradients.

#pragma once

#include <cmath>

#include "milkit/common.hpp"

namespace milkit::nn {

template <typename T>
Mat<T> linear(const Mat<T>& x, const Mat<T>& weight, const Mat<T>& bias) {
  Mat<T> y = x * weight.transpose();
  y.rowwise() += bias.col(0).transpose();
  return y;
}

/// Returns d(input); accumulates d(weight), d(bias).
template <typename T>
Mat<T> linear_backward(const Mat<T>& x, const Mat<T>& weight, const Mat<T>& dy, Mat<T>& dweight, Mat<T>& dbias) {
  dweight.noalias() += dy.transpose() * x;
  dbias.col(0) += dy.colwise().sum().transpose();
  return dy * weight;
}

template <typename T>
Mat<T> relu(const Mat<T>& x) {
  return x.cwiseMax(T(0));
}

template <typename T>
Mat<T> relu_backward(const Mat<T>& out, const Mat<T>& dy) {
  return (out.array() > T(0)).select(dy, T(0));
}

template <typename T>
Mat<T> sigmoid(const Mat<T>& x) {
  return (T(1) + (-x.array()).exp()).inverse().matrix();
}

/// Inverted dropout mask scaled by 1/(1-p); empty when p == 0.
template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  if (p <= 0.0) return {};
  std::bernoulli_distribution keep(1.0 - p);
  const T scale = T(1.0 / (1.0 - p));
  Mat<T> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = keep(rng) ? scale : T(0);
  return m;
}

template <typename T>
Vec<T> softmax(const Vec<T>& s) {
  const T mx = s.maxCoeff();
  Vec<T> e = (s.array() - mx).exp();
  return e / e.sum();
}

template <typename T>
Vec<T> softmax_backward(const Vec<T>& p, const Vec<T>& dp) {
  return p.cwiseProduct((dp.array() - p.dot(dp)).matrix());
}

template <typename T>
T log_sum_exp(const Vec<T>& s) {
  const T mx = s.maxCoeff();
  return mx + std::log((s.array() - mx).exp().sum());
}

/// Row-wise softmax of a square score matrix.
template <typename T>
Mat<T> softmax_rows(const Mat<T>& s) {
  Mat<T> out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const T mx = s.row(i).maxCoeff();
    out.row(i) = (s.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

template <typename T>
Mat<T> softmax_rows_backward(const Mat<T>& p, const Mat<T>& dp) {
  Vec<T> dots = p.cwiseProduct(dp).rowwise().sum();
  return p.cwiseProduct((dp.colwise() - dots));
}

/// Per-row layer normalization state kept for the backward pass.
template <typename T>
struct LayerNormCache {
  Mat<T> xhat;
  Vec<T> rstd;
};

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& gain, const Mat<T>& bias, LayerNormCache<T>& cache) {
  const auto d = static_cast<T>(x.cols());
  Vec<T> mu = x.rowwise().sum() / d;
  cache.xhat = x.colwise() - mu;
  Vec<T> var = cache.xhat.array().square().rowwise().sum() / d;
  cache.rstd = (var.array() + T(kLayerNormEps)).rsqrt();
  cache.xhat = cache.rstd.asDiagonal() * cache.xhat;
  Mat<T> y = cache.xhat * gain.col(0).asDiagonal();
  y.rowwise() += bias.col(0).transpose();
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const LayerNormCache<T>& cache, const Mat<T>& gain, const Mat<T>& dy, Mat<T>& dgain,
                           Mat<T>& dbias) {
  dgain.col(0) += dy.cwiseProduct(cache.xhat).colwise().sum().transpose();
  dbias.col(0) += dy.colwise().sum().transpose();
  const auto d = static_cast<T>(dy.cols());
  Mat<T> dxhat = dy * gain.col(0).asDiagonal();
  Vec<T> mean_dxhat = dxhat.rowwise().sum() / d;
  Vec<T> mean_dxhat_xhat = dxhat.cwiseProduct(cache.xhat).rowwise().sum() / d;
  Mat<T> dx = dxhat.colwise() - mean_dxhat;
  dx -= mean_dxhat_xhat.asDiagonal() * cache.xhat;
  return cache.rstd.asDiagonal() * dx;
}

}  // namespace milkit::nn
