#include "seqaug/diffusion/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "seqaug/core/error.hpp"

namespace seqaug::diffusion {

namespace {

AdamWConfig run_schedule(const TrainConfig& cfg) {
  AdamWConfig o = cfg.optim;
  o.total_steps = cfg.steps;
  o.warmup = std::min(o.warmup, cfg.steps);
  return o;
}

void check_train_config(const TrainConfig& cfg) {
  if (cfg.steps < 1 || cfg.batch < 1) throw ConfigError("training needs positive steps and batch size");
}

// Rows [first, first + count) of a [N, ...] tensor appended to `out`.
void append_rows(std::vector<float>& out, const TensorF& t, std::int64_t first, std::int64_t count) {
  const std::int64_t per = t.numel() / t.dim(0);
  auto d = t.data();
  out.insert(out.end(), d.begin() + first * per, d.begin() + (first + count) * per);
}

}  // namespace

std::vector<float> train_autoencoder(Autoencoder<float>& ae, const std::vector<SequenceClip>& clips,
                                     const TrainConfig& cfg, const ProgressFn& progress) {
  check_train_config(cfg);
  if (clips.empty()) throw DataError("no clips to train the autoencoder on");
  std::vector<std::pair<std::size_t, std::int64_t>> frames;
  for (std::size_t c = 0; c < clips.size(); ++c)
    for (std::int64_t f = 0; f < clips[c].frames(); ++f) frames.emplace_back(c, f);

  const auto& ac = ae.cfg;
  ae.set_requires_grad(true);
  AdamW opt(ae.parameters(), run_schedule(cfg));
  Rng data_rng(cfg.seed, 1), noise_rng(cfg.seed, 2);
  std::vector<float> losses;
  for (std::int64_t step = 1; step <= cfg.steps; ++step) {
    std::vector<float> batch;
    for (std::int64_t b = 0; b < cfg.batch; ++b) {
      const auto& [c, f] = frames[static_cast<std::size_t>(data_rng.below(frames.size()))];
      append_rows(batch, clips[c].pixels, f, 1);
    }
    TensorF x({cfg.batch, ac.channels, ac.height, ac.width}, std::move(batch));
    opt.zero_grad();
    auto loss = ae.loss(x, noise_rng);
    loss.backward();
    opt.step(step);
    losses.push_back(loss.item());
    if (!std::isfinite(losses.back())) throw NumericError("autoencoder loss diverged at step " + std::to_string(step));
    if (progress) progress(step, losses.back());
  }
  ae.set_requires_grad(false);

  // Latent scale from the posterior means of every frame.
  NoGradGuard guard;
  double s = 0.0, s2 = 0.0;
  std::int64_t n = 0;
  ae.latent_scale = 1.0f;
  for (const auto& clip : clips) {
    auto mu = ae.posterior(clip.pixels).mean;
    for (float v : mu.data()) {
      s += v;
      s2 += double(v) * v;
      ++n;
    }
  }
  const double var = s2 / double(n) - (s / double(n)) * (s / double(n));
  if (!(var > 0.0)) throw NumericError("autoencoder latents have zero variance");
  ae.latent_scale = static_cast<float>(1.0 / std::sqrt(var));
  ae.fitted = true;
  return losses;
}

std::vector<TensorF> encode_clips(const Autoencoder<float>& ae, const std::vector<SequenceClip>& clips) {
  if (!ae.fitted) throw StateError("autoencoder has not been trained");
  NoGradGuard guard;
  std::vector<TensorF> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(ae.encode(c.pixels));
  return out;
}

TensorF training_loss(const DenoiserModel& model, const TensorF& z0, std::span<const cond::ConditionsBank> banks,
                      std::span<const std::int64_t> t, const TensorF& eps, std::int64_t frames,
                      const NoiseSchedule& schedule, std::span<const std::uint64_t> pathway_seeds) {
  if (static_cast<std::int64_t>(t.size()) != static_cast<std::int64_t>(banks.size()))
    throw DimensionError("need one timestep per sample");
  std::vector<std::int64_t> per_row;
  for (auto step : t)
    for (std::int64_t f = 0; f < frames; ++f) per_row.push_back(step);
  auto zt = forward_diffuse(z0, per_row, eps, schedule);
  return mse_loss(model.forward(zt, t, banks, frames, pathway_seeds), eps);
}

std::vector<float> pretrain_image_ldm(DenoiserModel& model, const Autoencoder<float>& ae,
                                      const std::vector<SequenceClip>& clips, const LdmTrainConfig& cfg,
                                      const NoiseSchedule& schedule, const ProgressFn& progress) {
  check_train_config(cfg.train);
  if (model.sequence_mode()) throw StateError("pretraining expects an image-mode model");
  if (clips.empty()) throw DataError("no clips to pretrain on");
  const auto latents = encode_clips(ae, clips);

  model.set_requires_grad(true);
  AdamW opt(model.parameters(), run_schedule(cfg.train));
  Rng data_rng(cfg.train.seed, 11), noise_rng(cfg.train.seed, 12), drop_rng(cfg.train.seed, 13);
  const std::int64_t B = cfg.train.batch;
  std::vector<float> losses;
  for (std::int64_t step = 1; step <= cfg.train.steps; ++step) {
    std::vector<float> z;
    std::vector<cond::ConditionsBank> banks;
    std::vector<std::int64_t> t;
    for (std::int64_t b = 0; b < B; ++b) {
      const auto c = static_cast<std::size_t>(data_rng.below(clips.size()));
      const auto f = static_cast<std::int64_t>(data_rng.below(static_cast<std::uint64_t>(clips[c].frames())));
      append_rows(z, latents[c], f, 1);
      cond::ConditionsBank bank;
      bank.class_label = clips[c].class_id;
      bank.text = clips[c].tokens;
      bank.image_prior = clips[c].frame(0);
      banks.push_back(cond::drop_conditions(bank, drop_rng, cfg.drop));
      t.push_back(data_rng.integer(1, schedule.steps));
    }
    const auto& lat = latents[0];
    TensorF z0({B, lat.dim(1), lat.dim(2), lat.dim(3)}, std::move(z));
    auto eps = TensorF::randn(z0.shape(), noise_rng);
    opt.zero_grad();
    auto loss = training_loss(model, z0, banks, t, eps, 1, schedule);
    loss.backward();
    opt.step(step);
    losses.push_back(loss.item());
    if (!std::isfinite(losses.back())) throw NumericError("denoiser loss diverged at step " + std::to_string(step));
    if (progress) progress(step, losses.back());
  }
  model.set_requires_grad(false);
  return losses;
}

DenoiserModel inflate_2d_to_3d(DenoiserModel& image_model, Rng& rng) {
  if (image_model.sequence_mode()) throw StateError("model is already in sequence mode");
  Rng scratch(0, 0);
  DenoiserModel seq(image_model.cfg, scratch);
  nn::copy_parameters(seq, image_model);
  seq.inflate(rng);
  return seq;
}

std::vector<float> finetune_sequence_ldm(DenoiserModel& model, const Autoencoder<float>& ae,
                                         const std::vector<SequenceClip>& clips, const LdmTrainConfig& cfg,
                                         const NoiseSchedule& schedule, const ProgressFn& progress) {
  check_train_config(cfg.train);
  if (!model.sequence_mode()) throw StateError("finetuning expects an inflated model");
  if (clips.empty()) throw DataError("no clips to finetune on");
  const std::int64_t F = clips[0].frames();
  for (const auto& c : clips)
    if (c.frames() != F) throw DataError("finetuning clips must share a frame count");
  const auto latents = encode_clips(ae, clips);
  std::vector<cond::ConditionsBank> full_banks;
  for (const auto& c : clips) full_banks.push_back(cond::ConditionsBank::from_clip(c, cfg.motion_block, cfg.motion_radius));

  std::vector<TensorF> trainable;
  model.visit("", [&](const std::string& name, TensorF& p) {
    const bool on = DenoiserModel::is_finetune_parameter(name);
    p.set_requires_grad(on);
    if (on) trainable.push_back(p);
  });
  AdamW opt(trainable, run_schedule(cfg.train));
  Rng data_rng(cfg.train.seed, 21), noise_rng(cfg.train.seed, 22), drop_rng(cfg.train.seed, 23);
  const std::int64_t B = cfg.train.batch;
  std::vector<float> losses;
  for (std::int64_t step = 1; step <= cfg.train.steps; ++step) {
    std::vector<float> z;
    std::vector<cond::ConditionsBank> banks;
    std::vector<std::int64_t> t;
    std::vector<std::uint64_t> path_seeds;
    for (std::int64_t b = 0; b < B; ++b) {
      const auto c = static_cast<std::size_t>(data_rng.below(clips.size()));
      append_rows(z, latents[c], 0, F);
      path_seeds.push_back(data_rng.next_u64());
      banks.push_back(cond::drop_conditions(full_banks[c], drop_rng, cfg.drop));
      t.push_back(data_rng.integer(1, schedule.steps));
    }
    const auto& lat = latents[0];
    TensorF z0({B * F, lat.dim(1), lat.dim(2), lat.dim(3)}, std::move(z));
    auto eps = TensorF::randn(z0.shape(), noise_rng);
    opt.zero_grad();
    auto loss = training_loss(model, z0, banks, t, eps, F, schedule, path_seeds);
    loss.backward();
    opt.step(step);
    losses.push_back(loss.item());
    if (!std::isfinite(losses.back())) throw NumericError("denoiser loss diverged at step " + std::to_string(step));
    if (progress) progress(step, losses.back());
  }
  model.set_requires_grad(false);
  return losses;
}

std::uint64_t parameter_checksum(nn::Module<float>& module, const std::function<bool(const std::string&)>& select) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  module.visit("", [&](const std::string& name, TensorF& p) {
    if (!select(name)) return;
    for (char ch : name) h = (h ^ static_cast<unsigned char>(ch)) * 0x100000001b3ull;
    for (float v : p.data()) {
      unsigned char bytes[sizeof(float)];
      std::memcpy(bytes, &v, sizeof(float));
      for (unsigned char b : bytes) h = (h ^ b) * 0x100000001b3ull;
    }
  });
  return h;
}

}  // namespace seqaug::diffusion
