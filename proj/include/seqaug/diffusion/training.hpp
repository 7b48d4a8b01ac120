#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "seqaug/cond/conditions.hpp"
#include "seqaug/core/clip.hpp"
#include "seqaug/core/optim.hpp"
#include "seqaug/diffusion/autoencoder.hpp"
#include "seqaug/diffusion/schedule.hpp"
#include "seqaug/diffusion/unet.hpp"

namespace seqaug::diffusion {

struct TrainConfig {
  std::int64_t steps = 1000;
  std::int64_t batch = 8;
  AdamWConfig optim;
  std::uint64_t seed = 0;
};

// Called every step with (step, loss); may be empty.
using ProgressFn = std::function<void(std::int64_t, float)>;

// Fits the autoencoder on every frame of `clips`, then sets latent_scale to
// the reciprocal standard deviation of the posterior means. Returns the
// per-step loss.
std::vector<float> train_autoencoder(Autoencoder<float>& ae, const std::vector<SequenceClip>& clips,
                                     const TrainConfig& cfg, const ProgressFn& progress = {});

// Scaled posterior means of every frame, [F, c, h, w] per clip.
std::vector<TensorF> encode_clips(const Autoencoder<float>& ae, const std::vector<SequenceClip>& clips);

// ||eps - model(z_t, banks, t)||^2 averaged over elements, with z_t drawn by
// forward diffusion of z0 [B*frames, c, h, w].
TensorF training_loss(const DenoiserModel& model, const TensorF& z0, std::span<const cond::ConditionsBank> banks,
                      std::span<const std::int64_t> t, const TensorF& eps, std::int64_t frames,
                      const NoiseSchedule& schedule, std::span<const std::uint64_t> pathway_seeds = {});

struct LdmTrainConfig {
  TrainConfig train;
  cond::DropConfig drop;
  std::int64_t motion_block = 4;
  std::int64_t motion_radius = 3;
};

// Image-mode training on single frames. Each frame is conditioned on its
// clip's class, tokens and first frame.
std::vector<float> pretrain_image_ldm(DenoiserModel& model, const Autoencoder<float>& ae,
                                      const std::vector<SequenceClip>& clips, const LdmTrainConfig& cfg,
                                      const NoiseSchedule& schedule, const ProgressFn& progress = {});

// Copy of an image-mode model with SA, SAM and the motion path inserted.
DenoiserModel inflate_2d_to_3d(DenoiserModel& image_model, Rng& rng);

// Sequence-mode training that updates only finetune parameters; every other
// parameter has requires_grad cleared for the duration.
std::vector<float> finetune_sequence_ldm(DenoiserModel& model, const Autoencoder<float>& ae,
                                         const std::vector<SequenceClip>& clips, const LdmTrainConfig& cfg,
                                         const NoiseSchedule& schedule, const ProgressFn& progress = {});

// FNV-1a over the bytes of every parameter whose name satisfies `select`.
std::uint64_t parameter_checksum(nn::Module<float>& module, const std::function<bool(const std::string&)>& select);

}  // namespace seqaug::diffusion
