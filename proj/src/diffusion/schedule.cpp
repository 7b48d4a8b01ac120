#include "seqaug/diffusion/schedule.hpp"

#include <cmath>

#include "seqaug/core/error.hpp"

namespace seqaug::diffusion {

NoiseSchedule NoiseSchedule::linear(std::int64_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ConfigError("betas must satisfy 0 < start <= end < 1");
  NoiseSchedule s;
  s.steps = steps;
  double prod = 1.0;
  for (std::int64_t i = 0; i < steps; ++i) {
    const double b = steps == 1 ? beta_start
                                : beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                                                   static_cast<double>(steps - 1);
    s.betas.push_back(b);
    prod *= 1.0 - b;
    s.alphas_cumprod.push_back(prod);
  }
  return s;
}

double NoiseSchedule::alpha_bar(std::int64_t t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > steps) throw InputError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps) + "]");
  return alphas_cumprod[static_cast<std::size_t>(t - 1)];
}

TensorF forward_diffuse(const TensorF& z0, std::span<const std::int64_t> t, const TensorF& eps,
                        const NoiseSchedule& schedule) {
  if (z0.shape() != eps.shape()) throw DimensionError("noise shape must match the latent");
  if (z0.rank() < 1) throw DimensionError("latent must have a batch axis");
  const std::int64_t B = z0.dim(0);
  if (t.size() != 1 && static_cast<std::int64_t>(t.size()) != B)
    throw DimensionError("need one timestep or one per sample");
  const std::int64_t per = B == 0 ? 0 : z0.numel() / B;
  auto out = TensorF::zeros(z0.shape());
  auto o = out.data();
  const auto a = z0.data(), e = eps.data();
  for (std::int64_t b = 0; b < B; ++b) {
    const std::int64_t step = t.size() == 1 ? t[0] : t[static_cast<std::size_t>(b)];
    if (step < 1 || step > schedule.steps) throw InputError("timestep " + std::to_string(step) + " out of range");
    const double ab = schedule.alpha_bar(step);
    const auto sa = static_cast<float>(std::sqrt(ab)), sn = static_cast<float>(std::sqrt(1.0 - ab));
    for (std::int64_t i = b * per; i < (b + 1) * per; ++i) o[i] = sa * a[i] + sn * e[i];
  }
  return out;
}

std::vector<std::int64_t> ddim_timesteps(std::int64_t steps, const NoiseSchedule& schedule) {
  if (steps < 1 || steps > schedule.steps)
    throw ConfigError("sampling steps must lie in [1, " + std::to_string(schedule.steps) + "]");
  std::vector<std::int64_t> ts;
  ts.reserve(static_cast<std::size_t>(steps));
  for (std::int64_t i = 0; i < steps; ++i) ts.push_back(i * schedule.steps / steps + 1);
  return ts;
}

}  // namespace seqaug::diffusion
