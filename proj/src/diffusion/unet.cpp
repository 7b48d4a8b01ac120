#include "seqaug/diffusion/unet.hpp"

#include <cmath>

#include "seqaug/core/error.hpp"

namespace seqaug::diffusion {

namespace {

std::span<const std::int64_t> as_span(const std::vector<std::int64_t>& v) { return {v.data(), v.size()}; }

// [N, C, h, w] <-> [N, h*w, C].
TensorF to_tokens(const TensorF& x) {
  return permute(reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}), {0, 2, 1});
}

TensorF from_tokens(const TensorF& t, std::int64_t h, std::int64_t w) {
  return reshape(permute(t, {0, 2, 1}), {t.dim(0), t.dim(2), h, w});
}

void zero(nn::Conv2d<float>& c) { c.zero_init(); }

}  // namespace

ResBlock::ResBlock(std::int64_t in, std::int64_t out, std::int64_t emb_dim, std::int64_t groups, Rng& rng)
    : norm1(groups, in),
      norm2(groups, out),
      conv1(in, out, 3, 1, 1, rng),
      conv2(out, out, 3, 1, 1, rng),
      emb_proj(emb_dim, out, rng) {
  if (in != out) skip = std::make_unique<nn::Conv2d<float>>(in, out, 1, 1, 0, rng);
}

TensorF ResBlock::forward(const TensorF& x, const TensorF& emb) const {
  auto h = conv1.forward(silu(norm1.forward(x)));
  auto e = emb_proj.forward(silu(emb));
  h = add(h, reshape(e, {e.dim(0), e.dim(1), 1, 1}));
  h = conv2.forward(silu(norm2.forward(h)));
  return add(skip ? skip->forward(x) : x, h);
}

void ResBlock::visit(const std::string& prefix, const nn::ParamVisitor<float>& fn) {
  norm1.visit(nn::join_name(prefix, "norm1"), fn);
  conv1.visit(nn::join_name(prefix, "conv1"), fn);
  emb_proj.visit(nn::join_name(prefix, "emb_proj"), fn);
  norm2.visit(nn::join_name(prefix, "norm2"), fn);
  conv2.visit(nn::join_name(prefix, "conv2"), fn);
  if (skip) skip->visit(nn::join_name(prefix, "skip"), fn);
}

SelfAttention::SelfAttention(std::int64_t channels, Rng& rng)
    : q(channels, channels, rng, false),
      k(channels, channels, rng, false),
      v(channels, channels, rng, false),
      out(channels, channels, rng) {}

TensorF SelfAttention::forward(const TensorF& t) const {
  const float s = 1.0f / std::sqrt(static_cast<float>(t.dim(2)));
  return out.forward(attention(q.forward(t), k.forward(t), v.forward(t), s));
}

void SelfAttention::visit(const std::string& prefix, const nn::ParamVisitor<float>& fn) {
  q.visit(nn::join_name(prefix, "q"), fn);
  k.visit(nn::join_name(prefix, "k"), fn);
  v.visit(nn::join_name(prefix, "v"), fn);
  out.visit(nn::join_name(prefix, "out"), fn);
}

TransformerBlock::TransformerBlock(std::int64_t channels_, std::int64_t context_dim, std::int64_t groups, Rng& rng)
    : channels(channels_),
      norm(groups, channels_),
      proj_in(channels_, channels_, rng),
      proj_out(channels_, channels_, rng),
      norm1(channels_),
      norm2(channels_),
      norm3(channels_),
      attn(channels_, rng),
      cross(channels_, context_dim, channels_, rng),
      ff1(channels_, 2 * channels_, rng),
      ff2(2 * channels_, channels_, rng) {
  proj_out.zero_init();
}

void TransformerBlock::inflate(Rng& rng) {
  if (inflated()) throw StateError("transformer block already inflated");
  sam_block = std::make_unique<sam::SamBlock<float>>(channels, rng);
  sam_block->ka.init_from(attn.q, attn.k, attn.v);
  temporal = std::make_unique<sam::TemporalAttention<float>>(channels, rng);
}

TensorF TransformerBlock::forward(const TensorF& x, const FrameContext& ctx) const {
  const std::int64_t h = x.dim(2), w = x.dim(3);
  auto t = proj_in.forward(to_tokens(norm.forward(x)));
  t = add(t, attn.forward(norm1.forward(t)));
  if (sam_block) t = sam_block->forward(t, ctx.pathways);
  t = add(t, cross.forward(norm2.forward(t), ctx.text, ctx.image));
  if (temporal) t = temporal->forward(t, ctx.frames);
  t = add(t, ff2.forward(silu(ff1.forward(norm3.forward(t)))));
  return add(x, from_tokens(proj_out.forward(t), h, w));
}

void TransformerBlock::visit(const std::string& prefix, const nn::ParamVisitor<float>& fn) {
  norm.visit(nn::join_name(prefix, "norm"), fn);
  proj_in.visit(nn::join_name(prefix, "proj_in"), fn);
  norm1.visit(nn::join_name(prefix, "norm1"), fn);
  attn.visit(nn::join_name(prefix, "attn"), fn);
  if (sam_block) sam_block->visit(nn::join_name(prefix, "sam"), fn);
  norm2.visit(nn::join_name(prefix, "norm2"), fn);
  cross.visit(nn::join_name(prefix, "cross"), fn);
  if (temporal) temporal->visit(nn::join_name(prefix, "sa"), fn);
  norm3.visit(nn::join_name(prefix, "norm3"), fn);
  ff1.visit(nn::join_name(prefix, "ff1"), fn);
  ff2.visit(nn::join_name(prefix, "ff2"), fn);
  proj_out.visit(nn::join_name(prefix, "proj_out"), fn);
}

DenoiserModel::DenoiserModel(const UNetConfig& c, Rng& rng) : cfg(c) {
  const auto levels = static_cast<std::int64_t>(c.width_mult.size());
  if (levels < 1) throw ConfigError("UNet needs at least one level");
  if (c.latent_height % (std::int64_t{1} << (levels - 1)) != 0 || c.latent_width % (std::int64_t{1} << (levels - 1)) != 0)
    throw ConfigError("latent size must be divisible by 2^(levels-1)");
  if (c.image_height != c.latent_height * c.vae_rate || c.image_width != c.latent_width * c.vae_rate)
    throw ConfigError("image size must equal latent size times the VAE rate");
  time_dim = 4 * c.base_width;
  time1 = nn::Linear<float>(c.base_width, time_dim, rng);
  time2 = nn::Linear<float>(time_dim, time_dim, rng);
  class_embed = cond::ClassLabelEncoder<float>(c.num_classes, time_dim, rng);
  text_encoder = cond::TextEncoder<float>(c.vocab, c.context_dim, rng);
  image_encoder = cond::ImagePriorEncoder<float>(c.image_channels, c.image_height, c.image_width, c.image_hidden,
                                                 c.context_dim, c.image_strides, rng);
  in_conv = nn::Conv2d<float>(c.latent_channels, c.base_width, 3, 1, 1, rng);

  std::vector<std::int64_t> ch;
  for (auto m : c.width_mult) ch.push_back(c.base_width * m);
  std::int64_t cur = c.base_width;
  for (std::int64_t i = 0; i < levels; ++i) {
    down_res.emplace_back(cur, ch[i], time_dim, c.groups, rng);
    down_attn.emplace_back(ch[i], c.context_dim, c.groups, rng);
    cur = ch[i];
    if (i + 1 < levels) downsample.emplace_back(cur, cur, 3, 2, 1, rng);
  }
  mid = ResBlock(cur, cur, time_dim, c.groups, rng);
  up_res.resize(static_cast<std::size_t>(levels));
  upsample.resize(static_cast<std::size_t>(levels - 1));
  for (std::int64_t i = levels - 1; i >= 0; --i) {
    up_res[i] = ResBlock(cur + ch[i], ch[i], time_dim, c.groups, rng);
    cur = ch[i];
    if (i > 0) upsample[i - 1] = nn::Conv2d<float>(cur, cur, 3, 1, 1, rng);
  }
  out_norm = nn::GroupNorm<float>(c.groups, cur);
  out_conv = nn::Conv2d<float>(cur, c.latent_channels, 3, 1, 1, rng);
  zero(out_conv);
}

void DenoiserModel::inflate(Rng& rng) {
  if (sequence_mode()) throw StateError("model already inflated");
  for (auto& block : down_attn) block.inflate(rng);
  motion_encoder = std::make_unique<cond::MotionEncoder<float>>(cfg.vae_rate, cfg.motion_hidden, cfg.motion_channels, rng);
  in_conv_motion = std::make_unique<nn::Conv2d<float>>(cfg.motion_channels, cfg.base_width, 3, 1, 1, rng);
  zero(*in_conv_motion);
}

TensorF DenoiserModel::forward(const TensorF& z, std::span<const std::int64_t> timesteps,
                               std::span<const cond::ConditionsBank> banks, std::int64_t frames,
                               std::span<const std::uint64_t> pathway_seeds) const {
  const auto B = static_cast<std::int64_t>(banks.size());
  if (frames < 1 || B < 1 || z.rank() != 4 || z.dim(0) != B * frames)
    throw DimensionError("denoiser input " + shape_str(z.shape()) + " does not hold " + std::to_string(B) +
                         " samples of " + std::to_string(frames) + " frames");
  if (z.dim(1) != cfg.latent_channels || z.dim(2) != cfg.latent_height || z.dim(3) != cfg.latent_width)
    throw DimensionError("denoiser expects latents [N, " + std::to_string(cfg.latent_channels) + ", " +
                         std::to_string(cfg.latent_height) + ", " + std::to_string(cfg.latent_width) + "]");
  if (static_cast<std::int64_t>(timesteps.size()) != B) throw DimensionError("need one timestep per sample");
  if (!pathway_seeds.empty() && static_cast<std::int64_t>(pathway_seeds.size()) != B)
    throw DimensionError("need one pathway seed per sample");
  const std::int64_t N = z.dim(0);

  std::vector<std::int64_t> row_sample(static_cast<std::size_t>(N));
  for (std::int64_t i = 0; i < N; ++i) row_sample[static_cast<std::size_t>(i)] = i / frames;
  const auto expand = [&](const TensorF& per_sample) {
    return frames == 1 ? per_sample : index_select(per_sample, 0, as_span(row_sample));
  };

  // Timestep and class embedding.
  std::vector<std::int64_t> labels;
  for (const auto& b : banks) {
    const std::int64_t l = b.class_label ? *b.class_label : class_embed.null_id();
    if (l < 0 || l > class_embed.null_id()) throw InputError("class label out of range");
    labels.push_back(l);
  }
  auto temb = time2.forward(silu(time1.forward(nn::timestep_embedding<float>(timesteps, cfg.base_width))));
  auto emb = expand(class_embed.forward(as_span(labels), temb));

  // Text and image-prior context.
  std::vector<TensorF> text_parts, image_parts;
  std::vector<TensorF> priors;
  for (const auto& b : banks) {
    text_parts.push_back(b.text ? text_encoder.forward(as_span(*b.text)) : text_encoder.forward({}));
    if (b.image_prior) priors.push_back(reshape(*b.image_prior, {1, cfg.image_channels, cfg.image_height, cfg.image_width}));
  }
  TensorF prior_tokens;
  if (!priors.empty()) prior_tokens = image_encoder.forward(priors.size() == 1 ? priors[0] : concat(priors, 0));
  std::int64_t next_prior = 0;
  for (const auto& b : banks) {
    if (b.image_prior) {
      image_parts.push_back(reshape(slice(prior_tokens, 0, next_prior++, 1),
                                    {image_encoder.token_count(), cfg.context_dim}));
    } else {
      image_parts.push_back(image_encoder.null_tokens());
    }
  }
  FrameContext ctx;
  ctx.frames = frames;
  for (auto* dst : {&ctx.text, &ctx.image}) {
    auto padded = cond::pad_contexts<float>(dst == &ctx.text ? text_parts : image_parts);
    dst->tokens = expand(padded.tokens);
    for (std::int64_t i = 0; i < N; ++i) dst->lengths.push_back(padded.lengths[static_cast<std::size_t>(i / frames)]);
  }

  auto h = in_conv.forward(z);

  // Motion path and pathway sampling in sequence mode.
  std::vector<std::vector<sam::PatchPathwaySet>> level_paths(down_attn.size());
  if (sequence_mode()) {
    std::vector<std::vector<cond::MotionField>> fields;
    std::vector<TensorF> stacked;
    for (const auto& b : banks) {
      if (b.motion && static_cast<std::int64_t>(b.motion->size()) != frames - 1)
        throw DimensionError("motion condition must hold frames - 1 fields");
      fields.push_back(b.motion ? *b.motion : std::vector<cond::MotionField>{});
      if (frames > 1) {
        auto m = b.motion ? cond::motion_tensor(*b.motion)
                          : TensorF::zeros({frames - 1, 2, cfg.image_height, cfg.image_width});
        stacked.push_back(reshape(m, {1, frames - 1, 2, cfg.image_height, cfg.image_width}));
      }
    }
    auto motion = frames > 1 ? motion_encoder->forward(stacked.size() == 1 ? stacked[0] : concat(stacked, 0))
                             : TensorF::zeros({B, 1, cfg.motion_channels, cfg.latent_height, cfg.latent_width});
    motion = reshape(motion, {N, cfg.motion_channels, cfg.latent_height, cfg.latent_width});
    h = add(h, in_conv_motion->forward(motion));
    for (std::size_t i = 0; i < down_attn.size(); ++i)
      for (std::int64_t b = 0; b < B; ++b) {
        Rng rng(pathway_seeds.empty() ? 0 : pathway_seeds[static_cast<std::size_t>(b)], i);
        level_paths[i].push_back(sam::sample_patch_pathways(fields[static_cast<std::size_t>(b)], cfg.image_height,
                                                            cfg.image_width, cfg.vae_rate << i, frames, rng));
      }
  }

  std::vector<TensorF> skips;
  for (std::size_t i = 0; i < down_res.size(); ++i) {
    h = down_res[i].forward(h, emb);
    ctx.pathways = level_paths[i];
    h = down_attn[i].forward(h, ctx);
    skips.push_back(h);
    if (i < downsample.size()) h = downsample[i].forward(h);
  }
  h = mid.forward(h, emb);
  for (std::size_t i = up_res.size(); i-- > 0;) {
    h = up_res[i].forward(concat<float>({h, skips[i]}, 1), emb);
    if (i > 0) h = upsample[i - 1].forward(upsample_nearest(h, 2));
  }
  return out_conv.forward(silu(out_norm.forward(h)));
}

void DenoiserModel::visit(const std::string& prefix, const nn::ParamVisitor<float>& fn) {
  time1.visit(nn::join_name(prefix, "time1"), fn);
  time2.visit(nn::join_name(prefix, "time2"), fn);
  class_embed.visit(nn::join_name(prefix, "class_embed"), fn);
  text_encoder.visit(nn::join_name(prefix, "text_encoder"), fn);
  image_encoder.visit(nn::join_name(prefix, "image_encoder"), fn);
  in_conv.visit(nn::join_name(prefix, "in_conv"), fn);
  if (in_conv_motion) in_conv_motion->visit(nn::join_name(prefix, "in_conv_motion"), fn);
  if (motion_encoder) motion_encoder->visit(nn::join_name(prefix, "motion_encoder"), fn);
  for (std::size_t i = 0; i < down_res.size(); ++i) {
    down_res[i].visit(nn::join_name(prefix, "down_res" + std::to_string(i)), fn);
    down_attn[i].visit(nn::join_name(prefix, "down_attn" + std::to_string(i)), fn);
    if (i < downsample.size()) downsample[i].visit(nn::join_name(prefix, "downsample" + std::to_string(i)), fn);
  }
  mid.visit(nn::join_name(prefix, "mid"), fn);
  for (std::size_t i = 0; i < up_res.size(); ++i) {
    up_res[i].visit(nn::join_name(prefix, "up_res" + std::to_string(i)), fn);
    if (i < upsample.size()) upsample[i].visit(nn::join_name(prefix, "upsample" + std::to_string(i)), fn);
  }
  out_norm.visit(nn::join_name(prefix, "out_norm"), fn);
  out_conv.visit(nn::join_name(prefix, "out_conv"), fn);
}

bool DenoiserModel::is_finetune_parameter(const std::string& name) {
  const std::string dotted = "." + name;
  for (const char* key : {".sa.", ".sam.", ".motion_encoder.", ".in_conv_motion.", ".q_text.", ".q_image."})
    if (dotted.find(key) != std::string::npos) return true;
  return false;
}

}  // namespace seqaug::diffusion
