#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "seqaug/core/tensor.hpp"

namespace seqaug::diffusion {

// Discrete forward-noising schedule indexed by t in [1, T]; alpha_bar(0) = 1.
struct NoiseSchedule {
  std::int64_t steps = 1000;
  std::vector<double> betas;           // betas[t-1]
  std::vector<double> alphas_cumprod;  // alphas_cumprod[t-1]

  static NoiseSchedule linear(std::int64_t steps = 1000, double beta_start = 1e-4, double beta_end = 2e-2);
  double alpha_bar(std::int64_t t) const;
};

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, with one timestep per sample
// along axis 0 of z0 ([B, ...]) or a single shared timestep.
TensorF forward_diffuse(const TensorF& z0, std::span<const std::int64_t> t, const TensorF& eps,
                        const NoiseSchedule& schedule);

// Uniform sub-schedule t_i = i * T / steps + 1, ascending.
std::vector<std::int64_t> ddim_timesteps(std::int64_t steps, const NoiseSchedule& schedule);

}  // namespace seqaug::diffusion
