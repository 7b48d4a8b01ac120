#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "seqaug/cond/conditions.hpp"
#include "seqaug/cond/encoders.hpp"
#include "seqaug/core/ops.hpp"
#include "seqaug/nn/layers.hpp"
#include "seqaug/sam/sam.hpp"

namespace seqaug::diffusion {

struct UNetConfig {
  std::int64_t latent_channels = 4;
  std::int64_t latent_height = 8;
  std::int64_t latent_width = 8;
  std::int64_t base_width = 64;
  std::vector<std::int64_t> width_mult{1, 2, 2};  // one entry per resolution level
  std::int64_t groups = 8;
  std::int64_t context_dim = 64;
  std::int64_t num_classes = 3;
  std::int64_t vocab = 16;
  // Image-prior encoder input and layout.
  std::int64_t image_channels = 1;
  std::int64_t image_height = 32;
  std::int64_t image_width = 32;
  std::int64_t image_hidden = 32;
  std::array<std::int64_t, 3> image_strides{2, 2, 2};
  // Pixels per latent cell; also the motion encoder's downsampling rate and
  // the pathway scale at the top level.
  std::int64_t vae_rate = 4;
  std::int64_t motion_channels = 4;
  std::int64_t motion_hidden = 16;
};

// GN -> SiLU -> conv, plus the projected embedding, twice, with a skip.
class ResBlock : public nn::Module<float> {
 public:
  ResBlock() = default;
  ResBlock(std::int64_t in, std::int64_t out, std::int64_t emb_dim, std::int64_t groups, Rng& rng);
  // x [N, in, h, w], emb [N, emb_dim].
  TensorF forward(const TensorF& x, const TensorF& emb) const;
  void visit(const std::string& prefix, const nn::ParamVisitor<float>& fn) override;

  nn::GroupNorm<float> norm1, norm2;
  nn::Conv2d<float> conv1, conv2;
  nn::Linear<float> emb_proj;
  std::unique_ptr<nn::Conv2d<float>> skip;
};

// Spatial self-attention with an output projection.
class SelfAttention : public nn::Module<float> {
 public:
  SelfAttention() = default;
  SelfAttention(std::int64_t channels, Rng& rng);
  TensorF forward(const TensorF& tokens) const;  // [N, S, C]
  void visit(const std::string& prefix, const nn::ParamVisitor<float>& fn) override;

  nn::Linear<float> q, k, v, out;
};

// Per-sample context expanded to one row per frame.
struct FrameContext {
  cond::Context<float> text;
  cond::Context<float> image;
  std::int64_t frames = 1;
  std::span<const sam::PatchPathwaySet> pathways;  // empty in image mode
};

// GN, proj_in, self-attention, [SAM], decoupled cross-attention, [SA],
// feed-forward, proj_out, residual. Bracketed layers exist after inflation.
class TransformerBlock : public nn::Module<float> {
 public:
  TransformerBlock() = default;
  TransformerBlock(std::int64_t channels, std::int64_t context_dim, std::int64_t groups, Rng& rng);

  void inflate(Rng& rng);
  bool inflated() const { return static_cast<bool>(temporal); }
  TensorF forward(const TensorF& x, const FrameContext& ctx) const;  // x [N, C, h, w]
  void visit(const std::string& prefix, const nn::ParamVisitor<float>& fn) override;

  std::int64_t channels = 0;
  nn::GroupNorm<float> norm;
  nn::Linear<float> proj_in, proj_out;
  nn::LayerNorm<float> norm1, norm2, norm3;
  SelfAttention attn;
  cond::DecoupledCrossAttention<float> cross;
  nn::Linear<float> ff1, ff2;
  std::unique_ptr<sam::SamBlock<float>> sam_block;
  std::unique_ptr<sam::TemporalAttention<float>> temporal;
};

// Conditional noise predictor. Image mode treats every row of the input as an
// independent frame. inflate() switches to sequence mode: rows are grouped in
// runs of `frames` per sample and SA, SAM, the motion encoder and its input
// convolution are inserted with zero-initialised outputs.
class DenoiserModel : public nn::Module<float> {
 public:
  DenoiserModel() = default;
  DenoiserModel(const UNetConfig& cfg, Rng& rng);

  bool sequence_mode() const { return static_cast<bool>(motion_encoder); }
  void inflate(Rng& rng);

  // z [B*frames, c, h, w]; one timestep and one bank per sample. In sequence
  // mode sample b draws its pathways from pathway_seeds[b] (0 when empty).
  TensorF forward(const TensorF& z, std::span<const std::int64_t> timesteps,
                  std::span<const cond::ConditionsBank> banks, std::int64_t frames,
                  std::span<const std::uint64_t> pathway_seeds = {}) const;

  void visit(const std::string& prefix, const nn::ParamVisitor<float>& fn) override;
  // Parameters updated during sequence finetuning: SA, SAM, the motion path
  // and the cross-attention query projections.
  static bool is_finetune_parameter(const std::string& name);

  UNetConfig cfg;
  std::int64_t time_dim = 0;
  nn::Linear<float> time1, time2;
  cond::ClassLabelEncoder<float> class_embed;
  cond::TextEncoder<float> text_encoder;
  cond::ImagePriorEncoder<float> image_encoder;
  nn::Conv2d<float> in_conv;
  std::vector<ResBlock> down_res;
  std::vector<TransformerBlock> down_attn;
  std::vector<nn::Conv2d<float>> downsample;
  ResBlock mid;
  std::vector<ResBlock> up_res;  // up_res[i] serves level i
  std::vector<nn::Conv2d<float>> upsample;
  nn::GroupNorm<float> out_norm;
  nn::Conv2d<float> out_conv;
  std::unique_ptr<cond::MotionEncoder<float>> motion_encoder;
  std::unique_ptr<nn::Conv2d<float>> in_conv_motion;
};

}  // namespace seqaug::diffusion
