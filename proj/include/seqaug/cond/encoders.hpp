#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "seqaug/core/ops.hpp"
#include "seqaug/core/rng.hpp"
#include "seqaug/nn/layers.hpp"

namespace seqaug::cond {

// Context tokens padded to a common length; rows past lengths[b] are zero and
// masked out of attention.
template <typename T>
struct Context {
  Tensor<T> tokens;                   // [B, L, d]
  std::vector<std::int64_t> lengths;  // B entries, each in [1, L]
};

// Stacks per-sample [L_b, d] token sets into a padded Context.
template <typename T>
Context<T> pad_contexts(const std::vector<Tensor<T>>& parts);

// Class embedding added to the timestep embedding. Row num_classes is the null
// label and starts at zero.
template <typename T>
class ClassLabelEncoder : public nn::Module<T> {
 public:
  ClassLabelEncoder() = default;
  ClassLabelEncoder(std::int64_t num_classes, std::int64_t dim, Rng& rng);

  std::int64_t null_id() const { return num_classes; }
  // labels holds one id per row of t_emb [B, dim]; the null id is allowed.
  Tensor<T> forward(std::span<const std::int64_t> labels, const Tensor<T>& t_emb) const;
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) override;

  std::int64_t num_classes = 0;
  nn::Embedding<T> table;  // [num_classes + 1, dim]
};

// Token plus position embeddings over a fixed vocabulary. The empty sequence
// maps to a single learned null token.
template <typename T>
class TextEncoder : public nn::Module<T> {
 public:
  static constexpr std::int64_t kMaxTokens = 16;

  TextEncoder() = default;
  TextEncoder(std::int64_t vocab, std::int64_t dim, Rng& rng);

  Tensor<T> forward(std::span<const std::int64_t> tokens) const;  // [max(L,1), dim]
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) override;

  std::int64_t vocab = 0;
  nn::Embedding<T> token;
  nn::Embedding<T> position;
  Tensor<T> null_token;  // [1, dim]
};

// Three strided 3x3 convolutions with ReLU in between; the output grid
// becomes patch tokens of width dim. The null prior is one zero token.
template <typename T>
class ImagePriorEncoder : public nn::Module<T> {
 public:
  ImagePriorEncoder() = default;
  ImagePriorEncoder(std::int64_t channels, std::int64_t height, std::int64_t width, std::int64_t hidden,
                    std::int64_t dim, std::array<std::int64_t, 3> strides, Rng& rng);

  std::int64_t token_count() const { return out_h * out_w; }
  // frames [B, C, H, W] -> [B, token_count, dim].
  Tensor<T> forward(const Tensor<T>& frames) const;
  Tensor<T> null_tokens() const { return Tensor<T>::zeros({1, dim}); }
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) override;

  std::int64_t channels = 0, height = 0, width = 0, dim = 0, out_h = 0, out_w = 0;
  nn::Conv2d<T> conv1, conv2, conv3;
  Tensor<T> pos;  // [token_count, dim], zero at init
};

// Two parallel cross-attention streams sharing the query input: one over
// text tokens and one over image-prior tokens, summed before a shared output
// projection. The image-stream value projection starts at zero.
template <typename T>
class DecoupledCrossAttention : public nn::Module<T> {
 public:
  DecoupledCrossAttention() = default;
  DecoupledCrossAttention(std::int64_t query_dim, std::int64_t context_dim, std::int64_t inner_dim, Rng& rng);

  // z [B, n, query_dim] -> [B, n, query_dim].
  Tensor<T> forward(const Tensor<T>& z, const Context<T>& text, const Context<T>& image) const;
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) override;

  std::int64_t inner_dim = 0;
  nn::Linear<T> q_text, k_text, v_text;
  nn::Linear<T> q_image, k_image, v_image;
  nn::Linear<T> out;
};

// Strided convolutions taking pixel-resolution fields [N, 2, H, W] to the
// latent grid, one stride-2 stage per factor of two in `rate`, then a 1x1 to
// `channels`.
template <typename T>
class MotionEncoder : public nn::Module<T> {
 public:
  MotionEncoder() = default;
  MotionEncoder(std::int64_t rate, std::int64_t hidden, std::int64_t channels, Rng& rng, T input_scale = T(0.25));

  // fields [B, F-1, 2, H, W] -> [B, F, channels, H/rate, W/rate]; the last
  // frame slot is zero.
  Tensor<T> forward(const Tensor<T>& fields) const;
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) override;

  std::int64_t rate = 1, channels = 0;
  T input_scale = T(0.25);
  std::vector<nn::Conv2d<T>> down;
  nn::Conv2d<T> head;
};

}  // namespace seqaug::cond
