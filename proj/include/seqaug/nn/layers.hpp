#pragma once

#include <cstdint>
#include <span>

#include "seqaug/core/ops.hpp"
#include "seqaug/core/rng.hpp"
#include "seqaug/nn/module.hpp"

namespace seqaug::nn {

// y = x W^T + b over the last axis.
template <typename T>
class Linear : public Module<T> {
 public:
  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng, bool bias = true);

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }
  void visit(const std::string& prefix, const ParamVisitor<T>& fn) override;
  void zero_init();

  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out] or undefined
};

template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d() = default;
  Conv2d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride, std::int64_t padding, Rng& rng);

  // x [N,C,H,W].
  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, padding); }
  void visit(const std::string& prefix, const ParamVisitor<T>& fn) override;
  void zero_init();

  Tensor<T> weight;  // [out, in, k, k]
  Tensor<T> bias;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};

template <typename T>
class Conv3d : public Module<T> {
 public:
  Conv3d() = default;
  Conv3d(std::int64_t in, std::int64_t out, std::array<std::int64_t, 3> kernel, Conv3dParams params, Rng& rng);

  // x [N,C,D,H,W].
  Tensor<T> forward(const Tensor<T>& x) const { return conv3d(x, weight, bias, params); }
  void visit(const std::string& prefix, const ParamVisitor<T>& fn) override;

  Tensor<T> weight;
  Tensor<T> bias;
  Conv3dParams params;
};

template <typename T>
class GroupNorm : public Module<T> {
 public:
  GroupNorm() = default;
  GroupNorm(std::int64_t groups, std::int64_t channels);

  Tensor<T> forward(const Tensor<T>& x) const { return group_norm(x, groups, gamma, beta); }
  void visit(const std::string& prefix, const ParamVisitor<T>& fn) override;

  std::int64_t groups = 1;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
class LayerNorm : public Module<T> {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::int64_t channels);

  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
  void visit(const std::string& prefix, const ParamVisitor<T>& fn) override;

  Tensor<T> gamma;
  Tensor<T> beta;
};

// Lookup table [count, dim].
template <typename T>
class Embedding : public Module<T> {
 public:
  Embedding() = default;
  Embedding(std::int64_t count, std::int64_t dim, Rng& rng, T stddev = T(0.02));

  // Rows of the table for `ids`: [ids.size(), dim].
  Tensor<T> forward(std::span<const std::int64_t> ids) const;
  void visit(const std::string& prefix, const ParamVisitor<T>& fn) override;

  Tensor<T> table;
};

// Sinusoidal embedding of diffusion timesteps, [count, dim]; not trainable.
template <typename T>
Tensor<T> timestep_embedding(std::span<const std::int64_t> steps, std::int64_t dim);

// Copies every parameter value of `src` into `dst` (names must match).
template <typename T>
void copy_parameters(Module<T>& dst, Module<T>& src);

}  // namespace seqaug::nn
