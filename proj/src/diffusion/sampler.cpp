#include "seqaug/diffusion/sampler.hpp"

#include <cmath>

#include "seqaug/core/error.hpp"

namespace seqaug::diffusion {

namespace {

constexpr std::uint64_t kNoiseStream = 0x5eed;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = a * 0x9E3779B97F4A7C15ull ^ (b + 0x7F4A7C159E3779B9ull + (a << 6) + (a >> 2));
  h ^= h >> 31;
  return h * 0xBF58476D1CE4E5B9ull;
}

}  // namespace

TensorF cfg_predict(const DenoiserModel& model, const TensorF& z_t, std::span<const std::int64_t> t,
                    std::span<const cond::ConditionsBank> banks, std::int64_t frames, double guidance,
                    std::span<const std::uint64_t> pathway_seeds) {
  if (!(guidance >= 0.0)) throw ConfigError("guidance scale must be non-negative");
  if (guidance == 1.0) return model.forward(z_t, t, banks, frames, pathway_seeds);
  const std::vector<cond::ConditionsBank> null(banks.size());
  if (guidance == 0.0) return model.forward(z_t, t, null, frames, pathway_seeds);

  // Both branches in one batch: null banks first.
  std::vector<cond::ConditionsBank> both(null);
  both.insert(both.end(), banks.begin(), banks.end());
  std::vector<std::int64_t> tt(t.begin(), t.end());
  tt.insert(tt.end(), t.begin(), t.end());
  std::vector<std::uint64_t> ps;
  if (!pathway_seeds.empty()) {
    ps.assign(pathway_seeds.begin(), pathway_seeds.end());
    ps.insert(ps.end(), pathway_seeds.begin(), pathway_seeds.end());
  }
  auto eps = model.forward(concat<float>({z_t, z_t}, 0), tt, both, frames, ps);
  const std::int64_t n = z_t.numel();
  auto out = TensorF::zeros(z_t.shape());
  auto o = out.data();
  const auto e = eps.data();
  const auto s = static_cast<float>(guidance);
  for (std::int64_t i = 0; i < n; ++i) o[i] = e[i] + s * (e[n + i] - e[i]);
  return out;
}

TensorF ddim_sample_latents(const DenoiserModel& model, std::span<const cond::ConditionsBank> banks,
                            std::span<const std::uint64_t> seeds, std::int64_t frames, const SamplerConfig& cfg,
                            const NoiseSchedule& schedule) {
  if (banks.size() != seeds.size() || banks.empty()) throw InputError("need one seed per bank");
  const auto ts = ddim_timesteps(cfg.steps, schedule);
  const auto& mc = model.cfg;
  const auto B = static_cast<std::int64_t>(banks.size());
  const std::int64_t per = frames * mc.latent_channels * mc.latent_height * mc.latent_width;

  NoGradGuard guard;
  std::vector<float> init;
  init.reserve(static_cast<std::size_t>(B * per));
  for (auto s : seeds) {
    Rng rng(s, kNoiseStream);
    for (std::int64_t i = 0; i < per; ++i) init.push_back(static_cast<float>(rng.normal()));
  }
  TensorF x({B * frames, mc.latent_channels, mc.latent_height, mc.latent_width}, std::move(init));
  for (std::size_t k = ts.size(); k-- > 0;) {
    const std::int64_t t = ts[k];
    const std::int64_t prev = k == 0 ? 0 : ts[k - 1];
    const std::vector<std::int64_t> tb(static_cast<std::size_t>(B), t);
    std::vector<std::uint64_t> ps;
    for (auto s : seeds) ps.push_back(mix(s, static_cast<std::uint64_t>(t)));
    auto eps = cfg_predict(model, x, tb, banks, frames, cfg.guidance, ps);
    const double ab = schedule.alpha_bar(t), ap = schedule.alpha_bar(prev);
    const double c0 = std::sqrt(ap / ab);
    const double c1 = std::sqrt(1.0 - ap) - std::sqrt(ap * (1.0 - ab) / ab);
    auto xd = x.data();
    const auto ed = eps.data();
    for (std::int64_t i = 0; i < x.numel(); ++i)
      xd[i] = static_cast<float>(c0 * xd[i] + c1 * ed[i]);
  }
  require_finite(x, "sampled latents");
  return x;
}

TensorF ddim_sample(const DenoiserModel& model, const Autoencoder<float>& ae, const cond::ConditionsBank& bank,
                    std::int64_t frames, const SamplerConfig& cfg, const NoiseSchedule& schedule) {
  if (!ae.fitted) throw StateError("autoencoder has not been trained");
  const std::vector<cond::ConditionsBank> banks{bank};
  const std::vector<std::uint64_t> seeds{cfg.seed};
  auto z = ddim_sample_latents(model, banks, seeds, frames, cfg, schedule);
  NoGradGuard guard;
  return ae.decode(z);
}

std::vector<SyntheticGroup> generate_groups(const DenoiserModel& model, const Autoencoder<float>& ae,
                                           const std::vector<cond::ConditionsBank>& banks, std::int64_t per_group,
                                           std::int64_t frames, const SamplerConfig& cfg,
                                           const NoiseSchedule& schedule) {
  if (per_group < 1) throw ConfigError("each group needs at least one clip");
  if (!ae.fitted) throw StateError("autoencoder has not been trained");
  std::vector<SyntheticGroup> groups;
  for (std::size_t g = 0; g < banks.size(); ++g) {
    SyntheticGroup group;
    group.group_id = static_cast<std::int64_t>(g);
    group.bank = banks[g];
    const std::vector<cond::ConditionsBank> rep(static_cast<std::size_t>(per_group), banks[g]);
    std::vector<std::uint64_t> seeds;
    for (std::int64_t j = 0; j < per_group; ++j)
      seeds.push_back(cfg.seed + static_cast<std::uint64_t>(g) * static_cast<std::uint64_t>(per_group) +
                      static_cast<std::uint64_t>(j));
    auto z = ddim_sample_latents(model, rep, seeds, frames, cfg, schedule);
    NoGradGuard guard;
    auto px = ae.decode(z);
    const std::int64_t per = px.numel() / per_group;
    for (std::int64_t j = 0; j < per_group; ++j) {
      SequenceClip clip;
      clip.id = "syn-g" + std::to_string(g) + "-" + std::to_string(j);
      clip.pixels = TensorF({frames, px.dim(1), px.dim(2), px.dim(3)},
                            std::vector<float>(px.data().begin() + j * per, px.data().begin() + (j + 1) * per));
      clip.class_id = banks[g].class_label.value_or(-1);
      clip.tokens = banks[g].text.value_or(std::vector<std::int64_t>{});
      clip.source = ClipSource::Synthetic;
      group.clips.push_back(std::move(clip));
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

}  // namespace seqaug::diffusion
