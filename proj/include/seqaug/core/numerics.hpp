#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "seqaug/core/ops.hpp"
#include "seqaug/core/rng.hpp"
#include "seqaug/core/tensor.hpp"

namespace seqaug {

// softmax(Q K^T / sqrt(d)) V for Q [n,d], K [m,d], V [m,e].
template <typename T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v);

// Frame-wise convolution of x [F,C,H,W] with kernel [C',C,1,3,3], stride 1
// and zero "same" padding. Frames never mix.
template <typename T>
Tensor<T> conv_pseudo3d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias);

// Max over coordinates of |analytic - central difference| / max(1, |central
// difference|). `f` must be smooth at x; non-differentiable points (hard max,
// ReLU kinks) are outside the contract. Runs in double precision.
double grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& x, double eps = 1e-4);

// Cosine similarity of two equal-length vectors, accumulated in double.
double cosine_similarity(std::span<const float> a, std::span<const float> b);
double cosine_similarity(const TensorF& a, const TensorF& b);

struct KMeansResult {
  std::vector<double> centroids;  // ascending
  std::vector<int> assignments;   // index into centroids, per input value
  int iterations = 0;
};

// Lloyd's algorithm on the real line. Centroids start at the (i+0.5)/K
// quantiles of the sorted values; ties in assignment go to the lower index.
// The result does not depend on the order of `values`; `rng` is accepted for
// interface stability and is not consumed by the quantile initialization.
KMeansResult kmeans_1d(std::span<const double> values, int k, Rng* rng = nullptr, int max_iterations = 100);

}  // namespace seqaug
