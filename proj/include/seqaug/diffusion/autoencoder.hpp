#pragma once

#include <cstdint>
#include <vector>

#include "seqaug/core/ops.hpp"
#include "seqaug/core/rng.hpp"
#include "seqaug/nn/layers.hpp"

namespace seqaug::diffusion {

struct AutoencoderConfig {
  std::int64_t channels = 1;
  std::int64_t height = 32;
  std::int64_t width = 32;
  std::int64_t latent_channels = 4;
  std::int64_t rate = 4;  // power of two
  std::int64_t hidden = 32;
  double kl_weight = 1e-6;
};

// Stride-2 conv then a 3x3 conv, SiLU after each.
template <typename T>
class DownBlock : public nn::Module<T> {
 public:
  DownBlock() = default;
  DownBlock(std::int64_t in, std::int64_t out, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) override;

  nn::Conv2d<T> down, conv;
};

// Nearest x2 upsample then two 3x3 convs, SiLU after each.
template <typename T>
class UpBlock : public nn::Module<T> {
 public:
  UpBlock() = default;
  UpBlock(std::int64_t in, std::int64_t out, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) override;

  nn::Conv2d<T> conv1, conv2;
};

// Convolutional VAE with a diagonal Gaussian posterior. encode() returns the
// posterior mean times latent_scale; decode() undoes the scale and ends in a
// sigmoid so pixels stay in [0, 1].
template <typename T>
class Autoencoder : public nn::Module<T> {
 public:
  struct Posterior {
    Tensor<T> mean;
    Tensor<T> logvar;
  };

  Autoencoder() = default;
  Autoencoder(const AutoencoderConfig& cfg, Rng& rng);

  Posterior posterior(const Tensor<T>& x) const;   // x [N, C, H, W]
  Tensor<T> decode_unscaled(const Tensor<T>& z) const;
  Tensor<T> encode(const Tensor<T>& x) const;
  Tensor<T> decode(const Tensor<T>& z) const;
  // Reconstruction MSE plus kl_weight * KL(q || N(0, I)), sampling the
  // posterior with `rng`.
  Tensor<T> loss(const Tensor<T>& x, Rng& rng) const;

  std::int64_t latent_height() const { return cfg.height / cfg.rate; }
  std::int64_t latent_width() const { return cfg.width / cfg.rate; }
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) override;

  AutoencoderConfig cfg;
  T latent_scale = T(1);
  bool fitted = false;
  nn::Conv2d<T> enc_in, enc_out, dec_in, dec_out;
  std::vector<DownBlock<T>> enc_blocks;
  std::vector<UpBlock<T>> dec_blocks;
};

}  // namespace seqaug::diffusion
