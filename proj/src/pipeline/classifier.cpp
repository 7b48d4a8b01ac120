#include "seqaug/pipeline/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "seqaug/core/error.hpp"

namespace seqaug::pipeline {

namespace {

// Stream ids of the per-seed generators.
constexpr std::uint64_t kInitStream = 1, kShuffleStream = 2, kAugmentStream = 3, kOversampleStream = 4;

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

void fit(SequenceClassifier& model, const std::vector<SequenceClip>& clips, std::int64_t epochs,
         const ClassifierConfig& cfg, Rng& shuffle_rng, Rng& augment_rng, std::vector<double>& losses) {
  if (clips.empty()) throw DataError("cannot train a classifier on an empty dataset");
  if (epochs < 1 || cfg.batch < 1) throw ConfigError("classifier training needs positive epochs and batch size");
  const auto n = static_cast<std::int64_t>(clips.size());
  const std::int64_t per_epoch = (n + cfg.batch - 1) / cfg.batch;
  AdamWConfig oc = cfg.optim;
  oc.total_steps = epochs * per_epoch;
  oc.warmup = std::min(oc.warmup, oc.total_steps);
  model.set_requires_grad(true);
  AdamW opt(model.parameters(), oc);

  std::vector<std::size_t> order(clips.size());
  std::int64_t step = 0;
  for (std::int64_t e = 0; e < epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double total = 0.0;
    for (std::int64_t b = 0; b < per_epoch; ++b) {
      std::vector<const SequenceClip*> batch;
      std::vector<int> labels;
      for (std::int64_t i = b * cfg.batch; i < std::min(n, (b + 1) * cfg.batch); ++i) {
        const auto& c = clips[order[static_cast<std::size_t>(i)]];
        if (c.class_id < 0 || c.class_id >= cfg.num_classes) throw DataError("clip " + c.id + " has an unknown class");
        batch.push_back(&c);
        labels.push_back(static_cast<int>(c.class_id));
      }
      auto x = stack_clips(batch, &cfg.augment, &augment_rng);
      opt.zero_grad();
      auto loss = cross_entropy(model.forward(x), std::span<const int>(labels));
      loss.backward();
      opt.step(++step);
      const double l = loss.item();
      if (!std::isfinite(l)) throw NumericError("classifier loss diverged at step " + std::to_string(step));
      total += l * double(batch.size());
    }
    losses.push_back(total / double(n));
  }
  model.set_requires_grad(false);
}

void sample_pixel(const float* plane, std::int64_t H, std::int64_t W, double y, double x, float& out) {
  y = std::clamp(y, 0.0, double(H - 1));
  x = std::clamp(x, 0.0, double(W - 1));
  const auto y0 = static_cast<std::int64_t>(std::floor(y)), x0 = static_cast<std::int64_t>(std::floor(x));
  const std::int64_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
  const double fy = y - double(y0), fx = x - double(x0);
  const double top = plane[y0 * W + x0] * (1 - fx) + plane[y0 * W + x1] * fx;
  const double bot = plane[y1 * W + x0] * (1 - fx) + plane[y1 * W + x1] * fx;
  out = static_cast<float>(top * (1 - fy) + bot * fy);
}

}  // namespace

TensorF augment_clip(const TensorF& pixels, const AugmentConfig& cfg, Rng& rng) {
  if (pixels.rank() != 4) throw DimensionError("augment_clip expects [F, C, H, W]");
  const std::int64_t planes = pixels.dim(0) * pixels.dim(1), H = pixels.dim(2), W = pixels.dim(3);
  // Draw every parameter up front so the stream does not depend on toggles
  // being applied in a particular order.
  const double bright = cfg.brightness ? rng.uniform(-cfg.brightness_delta, cfg.brightness_delta) : 0.0;
  const std::int64_t sy = cfg.move ? rng.integer(-cfg.max_shift, cfg.max_shift) : 0;
  const std::int64_t sx = cfg.move ? rng.integer(-cfg.max_shift, cfg.max_shift) : 0;
  const double angle = cfg.rotation ? rng.uniform(-cfg.max_degrees, cfg.max_degrees) * std::numbers::pi / 180.0 : 0.0;
  const bool flip = cfg.flip && rng.bernoulli(0.5);

  std::vector<float> out(static_cast<std::size_t>(pixels.numel()));
  const auto in = pixels.data();
  const double cy = 0.5 * double(H - 1), cx = 0.5 * double(W - 1);
  const double cs = std::cos(angle), sn = std::sin(angle);
  for (std::int64_t p = 0; p < planes; ++p) {
    const float* src = in.data() + p * H * W;
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        // Inverse map: output (y, x) reads source at rotate^-1(unshift(unflip(y, x))).
        double ux = double(flip ? W - 1 - x : x) - double(sx), uy = double(y) - double(sy);
        const double rx = cs * (ux - cx) + sn * (uy - cy) + cx;
        const double ry = -sn * (ux - cx) + cs * (uy - cy) + cy;
        float v;
        sample_pixel(src, H, W, ry, rx, v);
        out[static_cast<std::size_t>((p * H + y) * W + x)] = v;
      }
  }
  for (auto& v : out) {
    double d = double(v) + bright;
    if (cfg.gaussian) d += cfg.sigma * rng.normal();
    v = static_cast<float>(std::clamp(d, 0.0, 1.0));
  }
  return TensorF(pixels.shape(), std::move(out));
}

const char* to_string(Paradigm p) {
  switch (p) {
    case Paradigm::Baseline: return "baseline";
    case Paradigm::RealFinetune: return "real_finetune";
    case Paradigm::JointTrain: return "joint_train";
  }
  return "unknown";
}

Paradigm parse_paradigm(const std::string& name) {
  if (name == "baseline") return Paradigm::Baseline;
  if (name == "real_finetune") return Paradigm::RealFinetune;
  if (name == "joint_train") return Paradigm::JointTrain;
  throw ConfigError("unknown paradigm '" + name + "' (baseline, real_finetune, joint_train)");
}

SequenceClassifier::SequenceClassifier(std::int64_t channels, std::int64_t classes, std::int64_t width, Rng& rng)
    : num_classes(classes) {
  if (width < 4 || width % 4 != 0) throw ConfigError("classifier width must be a positive multiple of 4");
  conv1 = nn::Conv3d<float>(channels, width, {3, 3, 3}, {{1, 2, 2}, {1, 1, 1}}, rng);
  conv2 = nn::Conv3d<float>(width, 2 * width, {3, 3, 3}, {{2, 2, 2}, {1, 1, 1}}, rng);
  conv3 = nn::Conv3d<float>(2 * width, 4 * width, {3, 3, 3}, {{2, 2, 2}, {1, 1, 1}}, rng);
  norm1 = nn::GroupNorm<float>(4, width);
  norm2 = nn::GroupNorm<float>(4, 2 * width);
  norm3 = nn::GroupNorm<float>(4, 4 * width);
  head = nn::Linear<float>(4 * width, classes, rng);
}

TensorF SequenceClassifier::forward(const TensorF& x) const {
  if (x.rank() != 5) throw DimensionError("classifier expects [N, C, F, H, W]");
  auto h = silu(norm1.forward(conv1.forward(x)));
  h = silu(norm2.forward(conv2.forward(h)));
  h = silu(norm3.forward(conv3.forward(h)));
  return head.forward(mean_trailing(h, 2));
}

std::vector<std::vector<double>> SequenceClassifier::predict_proba(const std::vector<SequenceClip>& clips) const {
  NoGradGuard guard;
  std::vector<std::vector<double>> out;
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < clips.size(); start += kChunk) {
    std::vector<const SequenceClip*> batch;
    for (std::size_t i = start; i < std::min(clips.size(), start + kChunk); ++i) batch.push_back(&clips[i]);
    const auto logits = forward(stack_clips(batch, nullptr, nullptr));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(num_classes));
      for (std::int64_t c = 0; c < num_classes; ++c) row[c] = logits.data()[i * num_classes + c];
      const double z = log_sum_exp(row);
      for (auto& v : row) v = std::exp(v - z);
      out.push_back(std::move(row));
    }
  }
  return out;
}

std::vector<double> SequenceClassifier::log_probabilities(const SequenceClip& clip) const {
  NoGradGuard guard;
  const auto logits = forward(stack_clips({&clip}, nullptr, nullptr));
  std::vector<double> row(logits.data().begin(), logits.data().end());
  const double z = log_sum_exp(row);
  for (auto& v : row) v -= z;
  return row;
}

void SequenceClassifier::visit(const std::string& prefix, const nn::ParamVisitor<float>& fn) {
  conv1.visit(nn::join_name(prefix, "conv1"), fn);
  norm1.visit(nn::join_name(prefix, "norm1"), fn);
  conv2.visit(nn::join_name(prefix, "conv2"), fn);
  norm2.visit(nn::join_name(prefix, "norm2"), fn);
  conv3.visit(nn::join_name(prefix, "conv3"), fn);
  norm3.visit(nn::join_name(prefix, "norm3"), fn);
  head.visit(nn::join_name(prefix, "head"), fn);
}

TensorF stack_clips(const std::vector<const SequenceClip*>& clips, const AugmentConfig* augment, Rng* rng) {
  if (clips.empty()) throw InputError("no clips to stack");
  const auto& first = *clips.front();
  const std::int64_t F = first.frames(), C = first.channels(), H = first.height(), W = first.width();
  const std::int64_t plane = H * W;
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(clips.size() * F * C * plane));
  for (const auto* c : clips) {
    if (c->frames() != F || c->channels() != C || c->height() != H || c->width() != W)
      throw DataError("clip " + c->id + " does not match the batch shape");
    const TensorF px = augment ? augment_clip(c->pixels, *augment, *rng) : c->pixels;
    const auto d = px.data();
    // [F, C, H, W] -> [C, F, H, W]
    for (std::int64_t ch = 0; ch < C; ++ch)
      for (std::int64_t f = 0; f < F; ++f)
        out.insert(out.end(), d.begin() + (f * C + ch) * plane, d.begin() + (f * C + ch + 1) * plane);
  }
  return TensorF({static_cast<std::int64_t>(clips.size()), C, F, H, W}, std::move(out));
}

std::vector<SequenceClip> oversample_real(const std::vector<SequenceClip>& real, std::int64_t target,
                                          std::int64_t num_classes, Rng& rng) {
  const auto R = static_cast<std::int64_t>(real.size());
  if (target <= R) return real;
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < real.size(); ++i) {
    const auto c = real[i].class_id;
    if (c < 0 || c >= num_classes) throw DataError("clip " + real[i].id + " has an unknown class");
    by_class[static_cast<std::size_t>(c)].push_back(i);
  }
  // Largest-remainder quotas; ties go to the lower class id.
  std::vector<std::int64_t> quota(static_cast<std::size_t>(num_classes));
  std::vector<std::pair<double, std::int64_t>> rem;
  std::int64_t assigned = 0;
  for (std::int64_t c = 0; c < num_classes; ++c) {
    const double exact = double(by_class[c].size()) * double(target) / double(R);
    quota[c] = static_cast<std::int64_t>(std::floor(exact));
    assigned += quota[c];
    rem.emplace_back(-(exact - double(quota[c])), c);
  }
  std::sort(rem.begin(), rem.end());
  for (std::size_t i = 0; assigned < target; ++i, ++assigned) ++quota[rem[i].second];

  std::vector<SequenceClip> out;
  out.reserve(static_cast<std::size_t>(target));
  for (std::int64_t c = 0; c < num_classes; ++c) {
    const auto& pool = by_class[c];
    for (std::int64_t k = 0; k < quota[c]; ++k) out.push_back(real[pool[rng.below(pool.size())]]);
  }
  return out;
}

TrainedClassifier train_classifier(const std::vector<SequenceClip>& real, const std::vector<SequenceClip>& synthetic,
                                   Paradigm paradigm, const ClassifierConfig& cfg, std::uint64_t seed) {
  if (real.empty()) throw DataError("cannot train a classifier without real clips");
  Rng init(seed, kInitStream), shuffle(seed, kShuffleStream), augment(seed, kAugmentStream);
  Rng oversample(seed, kOversampleStream);
  TrainedClassifier out{SequenceClassifier(real.front().channels(), cfg.num_classes, cfg.width, init), {}};

  if (paradigm == Paradigm::Baseline || synthetic.empty()) {
    fit(out.model, real, cfg.epochs, cfg, shuffle, augment, out.epoch_losses);
  } else if (paradigm == Paradigm::JointTrain) {
    auto mixed = oversample_real(real, static_cast<std::int64_t>(synthetic.size()), cfg.num_classes, oversample);
    mixed.insert(mixed.end(), synthetic.begin(), synthetic.end());
    fit(out.model, mixed, cfg.epochs, cfg, shuffle, augment, out.epoch_losses);
  } else {
    fit(out.model, synthetic, cfg.pretrain_epochs, cfg, shuffle, augment, out.epoch_losses);
    fit(out.model, real, cfg.epochs, cfg, shuffle, augment, out.epoch_losses);
  }
  return out;
}

}  // namespace seqaug::pipeline
