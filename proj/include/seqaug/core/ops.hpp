#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "seqaug/core/tensor.hpp"

// Differentiable tensor primitives. Every function records its backward
// pass on the tape when grad mode is on; all are instantiated for float
// (training) and double (gradient checks).
namespace seqaug {

// Elementwise arithmetic with same-rank broadcasting (extents equal or 1).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);

template <typename T> Tensor<T> silu(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
// Mean over every axis from `first_axis` on: [A.., B..] -> [A..].
template <typename T> Tensor<T> mean_trailing(const Tensor<T>& x, std::size_t first_axis);

// Shape manipulation. One extent of `shape` may be -1.
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::int64_t start, std::int64_t length);
// Gathers entries along `axis`; indices may repeat (backward scatter-adds).
template <typename T>
Tensor<T> index_select(const Tensor<T>& x, std::size_t axis, std::span<const std::int64_t> indices);

// [M,K] x [K,N] -> [M,N].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x[..., in] * W[out, in]^T + b[out]; `bias` may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T> Tensor<T> softmax(const Tensor<T>& x);      // over the last axis
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x);  // over the last axis
// Mean cross-entropy of logits [N, C] against integer labels.
template <typename T> Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);
template <typename T> Tensor<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target);

// Batched softmax(q k^T * scale) v with q [B,n,d], k [B,m,d], v [B,m,e].
// When `key_lengths` is non-empty, batch b attends only to its first
// key_lengths[b] keys (padding beyond is ignored).
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale,
                    std::span<const std::int64_t> key_lengths = {});

struct Conv3dParams {
  std::array<std::int64_t, 3> stride{1, 1, 1};
  std::array<std::int64_t, 3> padding{0, 0, 0};
};

// x [N,C,D,H,W], weight [O,C,kd,kh,kw], bias [O] or undefined; zero padding.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const Conv3dParams& p);
// x [N,C,H,W], weight [O,C,kh,kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::int64_t stride,
                 std::int64_t padding);

// Nearest-neighbour upsampling of the last two axes.
template <typename T> Tensor<T> upsample_nearest(const Tensor<T>& x, std::int64_t factor);

// x [N,C,...]; statistics per (sample, group of C/groups channels).
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::int64_t groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));
// Normalizes the last axis.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

// Throws NumericError naming `what` when x holds NaN/Inf.
template <typename T> void require_finite(const Tensor<T>& x, const char* what);

}  // namespace seqaug
