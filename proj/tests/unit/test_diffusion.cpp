#include <cmath>

#include "doctest.h"
#include "seqaug/core/error.hpp"
#include "seqaug/core/numerics.hpp"
#include "seqaug/diffusion/sampler.hpp"
#include "seqaug/diffusion/training.hpp"

using namespace seqaug;
using namespace seqaug::diffusion;

namespace {

UNetConfig tiny_unet() {
  UNetConfig c;
  c.base_width = 16;
  c.width_mult = {1, 2};
  c.groups = 4;
  c.context_dim = 16;
  c.image_hidden = 8;
  c.motion_hidden = 8;
  return c;
}

// Bright square drifting right by `speed` pixels per frame over faint noise.
SequenceClip drifting_square(std::int64_t frames, std::int64_t speed, std::int64_t label, Rng& rng) {
  SequenceClip clip;
  clip.id = "clip";
  clip.class_id = label;
  clip.tokens = {label + 1, 4};
  std::vector<float> px(static_cast<std::size_t>(frames * 32 * 32));
  for (std::int64_t f = 0; f < frames; ++f)
    for (std::int64_t y = 0; y < 32; ++y)
      for (std::int64_t x = 0; x < 32; ++x) {
        const bool in = y >= 10 && y < 18 && x >= 4 + f * speed && x < 12 + f * speed;
        px[static_cast<std::size_t>((f * 32 + y) * 32 + x)] =
            static_cast<float>(std::clamp((in ? 0.8 : 0.1) + 0.02 * rng.normal(), 0.0, 1.0));
      }
  clip.pixels = TensorF({frames, 1, 32, 32}, std::move(px));
  return clip;
}

// Adds small noise to every parameter so zero-initialised outputs carry signal.
void jitter(nn::Module<float>& m, Rng& rng, double scale = 0.05) {
  m.visit("", [&](const std::string&, TensorF& p) {
    for (auto& v : p.data()) v += static_cast<float>(scale * rng.normal());
  });
}

double max_abs_diff(const TensorF& a, const TensorF& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.data()[i]) - b.data()[i]));
  return m;
}

}  // namespace

TEST_CASE("noise schedule") {
  const auto s = NoiseSchedule::linear();
  CHECK(s.steps == 1000);
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.betas.front() == doctest::Approx(1e-4));
  CHECK(s.betas.back() == doctest::Approx(2e-2));
  for (std::int64_t t = 1; t <= s.steps; ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  CHECK(s.alpha_bar(1) == doctest::Approx(1.0 - 1e-4));
  CHECK_THROWS_AS(s.alpha_bar(1001), InputError);
  CHECK_THROWS_AS(s.alpha_bar(-1), InputError);

  SUBCASE("closed form at alpha_bar 0.64") {
    NoiseSchedule one;
    one.steps = 1;
    one.betas = {0.36};
    one.alphas_cumprod = {0.64};
    const std::vector<std::int64_t> t{1};
    auto z = forward_diffuse(TensorF::full({1, 1, 1, 1}, 1.0f), t, TensorF::full({1, 1, 1, 1}, 1.0f), one);
    CHECK(z.item() == doctest::Approx(1.4).epsilon(1e-6));
    z = forward_diffuse(TensorF::full({1, 1, 1, 1}, 1.0f), t, TensorF::full({1, 1, 1, 1}, 0.0f), one);
    CHECK(z.item() == doctest::Approx(0.8).epsilon(1e-6));
  }

  SUBCASE("marginal statistics") {
    Rng rng(5, 0);
    const std::int64_t n = 20000;
    for (std::int64_t t : {10, 500, 990}) {
      const std::vector<std::int64_t> ts{t};
      auto z = forward_diffuse(TensorF::full({n, 1, 1, 1}, 1.0f), ts, TensorF::randn({n, 1, 1, 1}, rng), s);
      double m = 0.0, m2 = 0.0;
      for (float v : z.data()) {
        m += v;
        m2 += double(v) * v;
      }
      m /= double(n);
      const double var = m2 / double(n) - m * m;
      const double ab = s.alpha_bar(t);
      CHECK(m == doctest::Approx(std::sqrt(ab)).epsilon(0.05));
      CHECK(var == doctest::Approx(1.0 - ab).epsilon(0.05));
    }
  }

  SUBCASE("per-row timesteps") {
    const std::vector<std::int64_t> ts{1, 1000};
    auto z = forward_diffuse(TensorF::full({2, 1, 1, 1}, 1.0f), ts, TensorF::zeros({2, 1, 1, 1}), s);
    CHECK(z.data()[0] == doctest::Approx(std::sqrt(s.alpha_bar(1))));
    CHECK(z.data()[1] == doctest::Approx(std::sqrt(s.alpha_bar(1000))));
    const std::vector<std::int64_t> bad{1, 2, 3};
    CHECK_THROWS(forward_diffuse(TensorF::zeros({2, 1, 1, 1}), bad, TensorF::zeros({2, 1, 1, 1}), s));
  }
}

TEST_CASE("ddim timesteps") {
  const auto s = NoiseSchedule::linear();
  const auto all = ddim_timesteps(1000, s);
  REQUIRE(all.size() == 1000);
  for (std::int64_t i = 0; i < 1000; ++i) CHECK(all[static_cast<std::size_t>(i)] == i + 1);
  CHECK(ddim_timesteps(4, s) == std::vector<std::int64_t>{1, 251, 501, 751});
  CHECK(ddim_timesteps(200, s).back() == 996);
  CHECK_THROWS_AS(ddim_timesteps(0, s), ConfigError);
  CHECK_THROWS_AS(ddim_timesteps(1001, s), ConfigError);
}

TEST_CASE("autoencoder") {
  Rng rng(7, 0);

  SUBCASE("shapes at rate 8 and rate 4") {
    AutoencoderConfig big;
    big.channels = 3;
    big.height = big.width = 256;
    big.rate = 8;
    big.hidden = 4;
    Autoencoder<float> ae(big, rng);
    NoGradGuard guard;
    auto x = TensorF::uniform({1, 3, 256, 256}, rng, 0.0f, 1.0f);
    auto post = ae.posterior(x);
    CHECK(post.mean.shape() == Shape{1, 4, 32, 32});
    CHECK(post.logvar.shape() == Shape{1, 4, 32, 32});
    CHECK(ae.decode(ae.encode(x)).shape() == Shape{1, 3, 256, 256});

    Autoencoder<float> small(AutoencoderConfig{}, rng);
    auto y = small.decode(small.encode(TensorF::uniform({2, 1, 32, 32}, rng, 0.0f, 1.0f)));
    CHECK(y.shape() == Shape{2, 1, 32, 32});
    for (float v : y.data()) CHECK((v >= 0.0f && v <= 1.0f));
  }

  SUBCASE("block gradients") {
    DownBlock<double> down(2, 3, rng);
    auto x = TensorD::randn({1, 2, 4, 4}, rng);
    auto w = TensorD::randn({1, 3, 2, 2}, rng);
    CHECK(grad_check([&](const TensorD& t) { return sum(mul(down.forward(t), w)); }, x) < 1e-4);

    UpBlock<double> up(2, 3, rng);
    auto w2 = TensorD::randn({1, 3, 8, 8}, rng);
    CHECK(grad_check([&](const TensorD& t) { return sum(mul(up.forward(t), w2)); }, x) < 1e-4);

    AutoencoderConfig dc;
    dc.height = dc.width = 8;
    dc.hidden = 4;
    dc.kl_weight = 0.1;
    Autoencoder<double> ae(dc, rng);
    auto img = TensorD::uniform({1, 1, 8, 8}, rng, 0.0, 1.0);
    CHECK(grad_check(
              [&](const TensorD& t) {
                Rng r(1, 1);
                return ae.loss(t, r);
              },
              img) < 1e-4);
  }

  SUBCASE("training fits the latent scale") {
    std::vector<SequenceClip> clips;
    for (int i = 0; i < 4; ++i) clips.push_back(drifting_square(4, 2, i % 3, rng));
    AutoencoderConfig c;
    c.hidden = 8;
    Autoencoder<float> ae(c, rng);
    CHECK_THROWS_AS(encode_clips(ae, clips), StateError);
    TrainConfig tc;
    tc.steps = 60;
    tc.batch = 4;
    tc.optim.lr = 3e-3;
    const auto losses = train_autoencoder(ae, clips, tc);
    REQUIRE(losses.size() == 60);
    CHECK(losses.back() < losses.front());
    CHECK(ae.fitted);
    const auto z = encode_clips(ae, clips);
    double s = 0.0, s2 = 0.0;
    std::int64_t n = 0;
    for (const auto& t : z)
      for (float v : t.data()) {
        s += v;
        s2 += double(v) * v;
        ++n;
      }
    CHECK(s2 / double(n) - (s / double(n)) * (s / double(n)) == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(z[0].shape() == Shape{4, 4, 8, 8});
  }
}

TEST_CASE("inflation preserves the image model") {
  Rng rng(11, 0);
  const auto cfg = tiny_unet();
  DenoiserModel image(cfg, rng);
  jitter(image, rng);
  Rng irng(12, 0);
  auto seq = inflate_2d_to_3d(image, irng);
  CHECK(seq.sequence_mode());
  CHECK_FALSE(image.sequence_mode());
  CHECK_THROWS_AS(inflate_2d_to_3d(seq, irng), StateError);

  const std::int64_t F = 4;
  auto clip = drifting_square(F, 2, 1, rng);
  auto bank = cond::ConditionsBank::from_clip(clip);
  auto z = TensorF::randn({F, 4, 8, 8}, rng);

  NoGradGuard guard;
  const std::vector<cond::ConditionsBank> one{bank};
  const std::vector<std::int64_t> t1{300};
  const std::vector<std::uint64_t> ps{99};
  auto y3 = seq.forward(z, t1, one, F, ps);

  // Image mode sees each frame as its own sample with the same bank minus motion.
  auto still = bank;
  still.motion.reset();
  const std::vector<cond::ConditionsBank> per_frame(F, still);
  const std::vector<std::int64_t> tf(F, 300);
  auto y2 = image.forward(z, tf, per_frame, 1);
  CHECK(max_abs_diff(y2, y3) < 1e-5);
  double mag = 0.0;
  for (float v : y2.data()) mag = std::max(mag, double(std::abs(v)));
  CHECK(mag > 1e-3);

  SUBCASE("parameter bookkeeping") {
    std::int64_t added = 0, tuned = 0, queries = 0;
    seq.visit("", [&](const std::string& name, TensorF& p) {
      const bool is_new = name.find(".sa.") != std::string::npos || name.find(".sam.") != std::string::npos ||
                          name.rfind("motion_encoder.", 0) == 0 || name.rfind("in_conv_motion.", 0) == 0;
      if (is_new) added += p.numel();
      if (DenoiserModel::is_finetune_parameter(name)) tuned += p.numel();
      if (name.find(".q_text.") != std::string::npos || name.find(".q_image.") != std::string::npos)
        queries += p.numel();
    });
    CHECK(seq.parameter_count() - image.parameter_count() == added);
    CHECK(tuned == added + queries);
    CHECK(queries > 0);
    CHECK(DenoiserModel::is_finetune_parameter("down_attn0.sam.ka.q.weight"));
    CHECK(DenoiserModel::is_finetune_parameter("motion_encoder.head.weight"));
    CHECK_FALSE(DenoiserModel::is_finetune_parameter("down_attn0.cross.k_text.weight"));
    CHECK_FALSE(DenoiserModel::is_finetune_parameter("time1.weight"));
  }

  SUBCASE("input validation") {
    CHECK_THROWS_AS(seq.forward(TensorF::zeros({3, 4, 8, 8}), t1, one, F), DimensionError);
    auto short_motion = bank;
    short_motion.motion->pop_back();
    const std::vector<cond::ConditionsBank> bad{short_motion};
    CHECK_THROWS_AS(seq.forward(z, t1, bad, F), DimensionError);
    auto bad_label = bank;
    bad_label.class_label = 7;
    const std::vector<cond::ConditionsBank> bl{bad_label};
    CHECK_THROWS_AS(seq.forward(z, t1, bl, F), InputError);
  }
}

TEST_CASE("training loss and finetune freezing") {
  Rng rng(21, 0);
  const auto cfg = tiny_unet();
  DenoiserModel image(cfg, rng);
  const auto schedule = NoiseSchedule::linear();
  const std::int64_t F = 4;
  std::vector<SequenceClip> clips;
  for (int i = 0; i < 3; ++i) clips.push_back(drifting_square(F, 2, i, rng));

  SUBCASE("zero-output model scores mean eps squared") {
    auto z0 = TensorF::randn({2 * F, 4, 8, 8}, rng);
    auto eps = TensorF::randn({2 * F, 4, 8, 8}, rng);
    const std::vector<cond::ConditionsBank> banks(2);
    const std::vector<std::int64_t> t{10, 900};
    Rng irng(1, 0);
    auto seq = inflate_2d_to_3d(image, irng);
    double ms = 0.0;
    for (float v : eps.data()) ms += double(v) * v;
    ms /= double(eps.numel());
    CHECK(training_loss(seq, z0, banks, t, eps, F, schedule).item() == doctest::Approx(ms).epsilon(1e-6));
  }

  AutoencoderConfig ac;
  ac.hidden = 8;
  Autoencoder<float> ae(ac, rng);
  TrainConfig tc;
  tc.steps = 5;
  tc.batch = 4;
  train_autoencoder(ae, clips, tc);

  LdmTrainConfig lc;
  lc.train.steps = 3;
  lc.train.batch = 4;
  lc.train.optim.lr = 1e-3;
  const auto pre = pretrain_image_ldm(image, ae, clips, lc, schedule);
  CHECK(pre.size() == 3);
  jitter(image, rng, 0.02);

  Rng irng(2, 0);
  auto seq = inflate_2d_to_3d(image, irng);
  CHECK_THROWS_AS(pretrain_image_ldm(seq, ae, clips, lc, schedule), StateError);
  CHECK_THROWS_AS(finetune_sequence_ldm(image, ae, clips, lc, schedule), StateError);

  const auto frozen = [](const std::string& n) { return !DenoiserModel::is_finetune_parameter(n); };
  const auto tuned = [](const std::string& n) { return DenoiserModel::is_finetune_parameter(n); };
  const auto frozen_before = parameter_checksum(seq, frozen);
  const auto tuned_before = parameter_checksum(seq, tuned);
  lc.train.batch = 2;
  const auto ft = finetune_sequence_ldm(seq, ae, clips, lc, schedule);
  CHECK(ft.size() == 3);
  for (float l : ft) CHECK(std::isfinite(l));
  CHECK(parameter_checksum(seq, frozen) == frozen_before);
  CHECK(parameter_checksum(seq, tuned) != tuned_before);

  lc.train.steps = 0;
  CHECK_THROWS_AS(finetune_sequence_ldm(seq, ae, clips, lc, schedule), ConfigError);
}

TEST_CASE("guidance and sampling") {
  Rng rng(31, 0);
  const auto cfg = tiny_unet();
  DenoiserModel image(cfg, rng);
  jitter(image, rng);
  Rng irng(3, 0);
  auto model = inflate_2d_to_3d(image, irng);
  jitter(model, rng, 0.02);
  const auto schedule = NoiseSchedule::linear();
  const std::int64_t F = 3;
  auto clip = drifting_square(F, 2, 2, rng);
  const auto bank = cond::ConditionsBank::from_clip(clip);

  SUBCASE("classifier-free guidance") {
    NoGradGuard guard;
    auto z = TensorF::randn({F, 4, 8, 8}, rng);
    const std::vector<cond::ConditionsBank> banks{bank}, null(1);
    const std::vector<std::int64_t> t{400};
    const std::vector<std::uint64_t> ps{5};
    auto c = model.forward(z, t, banks, F, ps);
    auto u = model.forward(z, t, null, F, ps);
    CHECK(max_abs_diff(cfg_predict(model, z, t, banks, F, 1.0, ps), c) == 0.0);
    CHECK(max_abs_diff(cfg_predict(model, z, t, banks, F, 0.0, ps), u) == 0.0);
    auto g = cfg_predict(model, z, t, banks, F, 2.5, ps);
    double worst = 0.0;
    for (std::int64_t i = 0; i < z.numel(); ++i) {
      const double want = u.data()[i] + 2.5 * (double(c.data()[i]) - u.data()[i]);
      worst = std::max(worst, std::abs(want - g.data()[i]));
    }
    CHECK(worst < 1e-4);
    CHECK_THROWS_AS(cfg_predict(model, z, t, banks, F, -1.0, ps), ConfigError);
  }

  AutoencoderConfig ac;
  ac.hidden = 8;
  Autoencoder<float> ae(ac, rng);
  SamplerConfig sc;
  sc.steps = 3;
  sc.guidance = 2.0;
  sc.seed = 40;
  CHECK_THROWS_AS(ddim_sample(model, ae, bank, F, sc, schedule), StateError);
  ae.fitted = true;

  SUBCASE("determinism") {
    auto a = ddim_sample(model, ae, bank, F, sc, schedule);
    auto b = ddim_sample(model, ae, bank, F, sc, schedule);
    CHECK(a.shape() == Shape{F, 1, 32, 32});
    CHECK(max_abs_diff(a, b) == 0.0);
    sc.seed = 41;
    CHECK(max_abs_diff(a, ddim_sample(model, ae, bank, F, sc, schedule)) > 1e-4);
  }

  SUBCASE("single step recovers the clean estimate") {
    // One step from t = 1 lands on x0 = (x - sqrt(1 - ab) eps) / sqrt(ab).
    NoiseSchedule one;
    one.steps = 1;
    one.betas = {0.36};
    one.alphas_cumprod = {0.64};
    SamplerConfig s1;
    s1.steps = 1;
    s1.guidance = 1.0;
    // Without motion every pathway is a straight line, so the seed only sets the noise.
    const std::vector<cond::ConditionsBank> still(1);
    const std::vector<std::uint64_t> seeds{3};
    auto x0 = ddim_sample_latents(model, still, seeds, F, s1, one);
    Rng noise(3, 0x5eed);
    std::vector<float> init(static_cast<std::size_t>(F * 4 * 8 * 8));
    for (auto& v : init) v = static_cast<float>(noise.normal());
    TensorF xt({F, 4, 8, 8}, std::move(init));
    NoGradGuard guard;
    const std::vector<std::int64_t> t{1};
    auto eps = model.forward(xt, t, still, F);
    double worst = 0.0;
    for (std::int64_t i = 0; i < xt.numel(); ++i) {
      const double want = (xt.data()[i] - 0.6 * double(eps.data()[i])) / 0.8;
      worst = std::max(worst, std::abs(want - x0.data()[i]));
    }
    CHECK(worst < 1e-4);
  }

  SUBCASE("groups") {
    const std::vector<cond::ConditionsBank> banks{bank, cond::ConditionsBank::null()};
    const auto groups = generate_groups(model, ae, banks, 2, F, sc, schedule);
    REQUIRE(groups.size() == 2);
    CHECK(groups[0].clips.size() == 2);
    CHECK(groups[1].clips[1].id == "syn-g1-1");
    CHECK(groups[0].clips[0].class_id == 2);
    CHECK(groups[1].clips[0].class_id == -1);
    CHECK(groups[0].clips[0].source == ClipSource::Synthetic);
    CHECK(groups[0].clips[0].pixels.shape() == Shape{F, 1, 32, 32});
    // Clip j of group g replays alone with seed + g*M + j.
    SamplerConfig one = sc;
    one.seed = sc.seed + 1 * 2 + 1;
    CHECK(max_abs_diff(groups[1].clips[1].pixels, ddim_sample(model, ae, banks[1], F, one, schedule)) < 1e-4);
    one.seed = sc.seed + 1;
    CHECK(max_abs_diff(groups[0].clips[1].pixels, ddim_sample(model, ae, banks[0], F, one, schedule)) < 1e-4);
    CHECK_THROWS_AS(generate_groups(model, ae, banks, 0, F, sc, schedule), ConfigError);
  }
}
