#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "seqaug/cond/conditions.hpp"
#include "seqaug/core/clip.hpp"
#include "seqaug/diffusion/autoencoder.hpp"
#include "seqaug/diffusion/schedule.hpp"
#include "seqaug/diffusion/unet.hpp"

namespace seqaug::diffusion {

struct SamplerConfig {
  std::int64_t steps = 200;
  double guidance = 7.5;
  std::uint64_t seed = 0;
};

// eps_u + s * (eps_c - eps_u) with eps_u from the null bank. s = 1 returns the
// conditional prediction and s = 0 the unconditional one without mixing.
TensorF cfg_predict(const DenoiserModel& model, const TensorF& z_t, std::span<const std::int64_t> t,
                    std::span<const cond::ConditionsBank> banks, std::int64_t frames, double guidance,
                    std::span<const std::uint64_t> pathway_seeds = {});

// Deterministic DDIM (eta = 0) over the uniform sub-schedule, one sample per
// bank. Sample b starts from Gaussian latents seeded by seeds[b] and draws
// its pathways at step t from a hash of (seeds[b], t), so its trajectory does
// not depend on the rest of the batch. Returns latents [B*frames, c, h, w].
TensorF ddim_sample_latents(const DenoiserModel& model, std::span<const cond::ConditionsBank> banks,
                            std::span<const std::uint64_t> seeds, std::int64_t frames, const SamplerConfig& cfg,
                            const NoiseSchedule& schedule);

// Single clip decoded to pixels [F, C, H, W].
TensorF ddim_sample(const DenoiserModel& model, const Autoencoder<float>& ae, const cond::ConditionsBank& bank,
                    std::int64_t frames, const SamplerConfig& cfg, const NoiseSchedule& schedule);

struct SyntheticGroup {
  std::int64_t group_id = 0;
  cond::ConditionsBank bank;
  std::vector<SequenceClip> clips;
};

// M clips per bank; clip j of group g uses seed cfg.seed + g*M + j.
std::vector<SyntheticGroup> generate_groups(const DenoiserModel& model, const Autoencoder<float>& ae,
                                           const std::vector<cond::ConditionsBank>& banks, std::int64_t per_group,
                                           std::int64_t frames, const SamplerConfig& cfg,
                                           const NoiseSchedule& schedule);

}  // namespace seqaug::diffusion
