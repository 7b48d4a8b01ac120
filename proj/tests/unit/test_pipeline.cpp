#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "doctest.h"
#include "seqaug/cond/conditions.hpp"
#include "seqaug/core/error.hpp"
#include "seqaug/pipeline/experiment.hpp"

using namespace seqaug;
using namespace seqaug::pipeline;

namespace {

std::vector<float> pixels_of(const SequenceClip& c) { return c.pixels.vec(); }

// AUROC as the probability that a random positive outscores a random
// negative, ties counting one half.
double pair_count_auroc(const std::vector<double>& s, const std::vector<bool>& pos) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (pos[i] && !pos[j]) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

std::vector<float> flat_parameters(SequenceClassifier& m) {
  std::vector<float> out;
  m.visit("", [&](const std::string&, TensorF& p) {
    const auto v = p.vec();
    out.insert(out.end(), v.begin(), v.end());
  });
  return out;
}

ToyDatasetSpec small_spec() {
  ToyDatasetSpec s;
  s.train_counts = {6, 3, 3};
  s.test_counts = {2, 2, 2};
  s.frames = 4;
  s.size = 24;
  s.seed = 5;
  return s;
}

ClassifierConfig small_classifier() {
  ClassifierConfig c;
  c.width = 4;
  c.epochs = 2;
  c.pretrain_epochs = 1;
  c.batch = 4;
  return c;
}

ExperimentConfig micro_config() {
  ExperimentConfig c = toy_preset();
  c.dataset.train_counts = {4, 2, 2};
  c.dataset.test_counts = {2, 2, 2};
  c.dataset.frames = 4;
  c.dataset.size = 24;
  c.autoencoder.height = c.autoencoder.width = 24;
  c.autoencoder.hidden = 8;
  c.vae_train.steps = 3;
  c.vae_train.batch = 4;
  c.unet.base_width = 8;
  c.unet.groups = 4;
  c.unet.context_dim = 8;
  c.unet.image_hidden = 4;
  c.unet.motion_hidden = 4;
  c.image_ldm.train.steps = 2;
  c.image_ldm.train.batch = 2;
  c.sequence_ldm.train.steps = 2;
  c.sequence_ldm.train.batch = 1;
  c.sampler.steps = 2;
  c.generation.groups_per_class = 2;
  c.generation.clips_per_group = 2;
  c.classifier.width = 4;
  c.classifier.epochs = 1;
  c.classifier.pretrain_epochs = 1;
  c.classifier.batch = 4;
  c.classifier_seeds = {0};
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("toy dataset") {
  const ToyDatasetSpec spec;
  const auto a = make_toy_dataset(spec);
  const auto b = make_toy_dataset(spec);
  CHECK(class_counts(a.train, 3) == std::vector<std::int64_t>{100, 25, 25});
  CHECK(class_counts(a.test, 3) == std::vector<std::int64_t>{20, 20, 20});
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].id == b.train[i].id);
    CHECK(a.train[i].tokens == b.train[i].tokens);
    CHECK(pixels_of(a.train[i]) == pixels_of(b.train[i]));
  }
  for (const auto& c : a.train) {
    CHECK_NOTHROW(validate_clip(c));
    CHECK(c.pixels.shape() == Shape{8, 1, 32, 32});
    CHECK(c.tokens.size() == 4);
  }
  auto other = spec;
  other.seed = 1;
  CHECK(pixels_of(make_toy_dataset(other).train[0]) != pixels_of(a.train[0]));

  auto bad = spec;
  bad.train_counts = {100, 0, 25};
  CHECK_THROWS_AS(make_toy_dataset(bad), ConfigError);
  bad = spec;
  bad.size = 20;
  CHECK_THROWS_AS(make_toy_dataset(bad), ConfigError);
}

TEST_CASE("class-0 clips move right by two pixels per frame") {
  // Noise-free, high-contrast clips make the object mask a simple threshold.
  ToyDatasetSpec spec;
  spec.noise = 0.0;
  spec.contrast = 0.5;
  const std::int64_t S = spec.size, B = 4;
  std::int64_t checked = 0;
  for (std::uint64_t k = 0; k < 30; ++k) {
    Rng rng(11, k);
    const auto clip = make_toy_clip(spec, 0, rng, "c" + std::to_string(k));
    const auto px = clip.pixels.vec();
    const float lo = *std::min_element(px.begin(), px.end());
    auto inside = [&](std::int64_t f, std::int64_t y, std::int64_t x) {
      return x >= 0 && x < S && px[static_cast<std::size_t>((f * S + y) * S + x)] > lo + 0.15f;
    };
    const auto fields = cond::extract_motion_field(clip, B, 3);
    REQUIRE(fields.size() == 7);
    for (std::int64_t f = 0; f + 1 < clip.frames(); ++f)
      for (std::int64_t by = 0; by < S; by += B)
        for (std::int64_t bx = 0; bx < S; bx += B) {
          bool interior = true;
          for (std::int64_t y = by; y < by + B; ++y)
            for (std::int64_t x = bx; x < bx + B; ++x) interior = interior && inside(f, y, x) && inside(f + 1, y, x + 2);
          if (!interior) continue;
          ++checked;
          const auto i = static_cast<std::size_t>(by * S + bx);
          CHECK(fields[f].dy[i] == 0.0f);
          CHECK(fields[f].dx[i] == 2.0f);
        }
  }
  CHECK(checked > 20);
}

TEST_CASE("dataset round trip through disk") {
  const auto dir = std::filesystem::temp_directory_path() / "seqaug_test_dataset";
  std::filesystem::remove_all(dir);
  const auto ds = make_toy_dataset(small_spec());
  save_clip_set(dir, "train", ds.train);
  const auto back = load_clip_set(dir, "train");
  REQUIRE(back.size() == ds.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == ds.train[i].id);
    CHECK(back[i].class_id == ds.train[i].class_id);
    CHECK(back[i].tokens == ds.train[i].tokens);
    CHECK(pixels_of(back[i]) == pixels_of(ds.train[i]));
  }
  CHECK_THROWS_AS(load_clip_set(dir, "missing"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("oversampling") {
  auto ds = make_toy_dataset(ToyDatasetSpec{});
  Rng rng(3, 0);
  const auto up = oversample_real(ds.train, 400, 3, rng);
  CHECK(up.size() == 400);
  CHECK(class_counts(up, 3) == std::vector<std::int64_t>{267, 67, 66});
  std::map<std::string, int> ids;
  for (const auto& c : ds.train) ids[c.id] = 0;
  for (const auto& c : up) CHECK(ids.count(c.id) == 1);

  Rng again(3, 0);
  const auto up2 = oversample_real(ds.train, 400, 3, again);
  for (std::size_t i = 0; i < up.size(); ++i) CHECK(up[i].id == up2[i].id);

  Rng unused(3, 0);
  CHECK(oversample_real(ds.train, 150, 3, unused).size() == 150);
  CHECK(oversample_real(ds.train, 10, 3, unused).size() == 150);

  // Each class within one clip of its exact share.
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 50; ++trial) {
    ToyDatasetSpec s = small_spec();
    s.train_counts = {std::int64_t(1 + gen() % 9), std::int64_t(1 + gen() % 9), std::int64_t(1 + gen() % 9)};
    const auto real = make_toy_dataset(s).train;
    const auto target = static_cast<std::int64_t>(real.size() + gen() % 50);
    Rng r(trial, 0);
    const auto out = oversample_real(real, target, 3, r);
    REQUIRE(static_cast<std::int64_t>(out.size()) == target);
    const auto n = class_counts(out, 3);
    for (std::size_t c = 0; c < 3; ++c) {
      const double exact = double(s.train_counts[c]) * double(target) / double(real.size());
      CHECK(std::abs(double(n[c]) - exact) < 1.0);
    }
  }
}

TEST_CASE("augmentations") {
  const auto ds = make_toy_dataset(small_spec());
  const auto& px = ds.train[0].pixels;
  AugmentConfig off{false, 0.1, false, 2, false, 0.02, false, 10.0, false};
  Rng rng(1, 1);
  CHECK(augment_clip(px, off, rng).vec() == px.vec());

  // A pure shift moves content by an integer offset with edge replication.
  AugmentConfig shift = off;
  shift.move = true;
  Rng r2(2, 2);
  const auto out = augment_clip(px, shift, r2).vec();
  Rng replay(2, 2);
  const auto sy = replay.integer(-2, 2), sx = replay.integer(-2, 2);
  const std::int64_t S = px.dim(3);
  const auto in = px.vec();
  for (std::int64_t f = 0; f < px.dim(0); ++f)
    for (std::int64_t y = 0; y < S; ++y)
      for (std::int64_t x = 0; x < S; ++x) {
        const auto yy = std::clamp<std::int64_t>(y - sy, 0, S - 1), xx = std::clamp<std::int64_t>(x - sx, 0, S - 1);
        CHECK(out[static_cast<std::size_t>((f * S + y) * S + x)] == in[static_cast<std::size_t>((f * S + yy) * S + xx)]);
      }

  AugmentConfig all{true, 0.1, true, 2, true, 0.02, true, 10.0, true};
  Rng r3(3, 3);
  const auto a = augment_clip(px, all, r3).vec();
  CHECK(std::all_of(a.begin(), a.end(), [](float v) { return v >= 0.0f && v <= 1.0f; }));
  CHECK(a != in);
}

TEST_CASE("paradigms with no synthetic clips reduce to the baseline") {
  const auto ds = make_toy_dataset(small_spec());
  const auto cfg = small_classifier();
  auto base = train_classifier(ds.train, {}, Paradigm::Baseline, cfg, 9);
  auto joint = train_classifier(ds.train, {}, Paradigm::JointTrain, cfg, 9);
  auto fine = train_classifier(ds.train, {}, Paradigm::RealFinetune, cfg, 9);
  CHECK(flat_parameters(base.model) == flat_parameters(joint.model));
  CHECK(flat_parameters(base.model) == flat_parameters(fine.model));
  CHECK(base.epoch_losses == joint.epoch_losses);
  CHECK(base.epoch_losses.size() == 2);

  std::vector<SequenceClip> syn = ds.test;
  for (auto& c : syn) c.source = ClipSource::Synthetic;
  auto with = train_classifier(ds.train, syn, Paradigm::JointTrain, cfg, 9);
  CHECK(flat_parameters(with.model) != flat_parameters(base.model));
  auto ft = train_classifier(ds.train, syn, Paradigm::RealFinetune, cfg, 9);
  CHECK(ft.epoch_losses.size() == 3);

  CHECK_THROWS_AS(train_classifier({}, {}, Paradigm::Baseline, cfg, 0), DataError);
  CHECK(parse_paradigm("joint_train") == Paradigm::JointTrain);
  CHECK_THROWS_AS(parse_paradigm("mixup"), ConfigError);
}

TEST_CASE("classifier outputs and checkpoints") {
  const auto ds = make_toy_dataset(small_spec());
  auto trained = train_classifier(ds.train, {}, Paradigm::Baseline, small_classifier(), 2);
  const auto probs = trained.model.predict_proba(ds.test);
  REQUIRE(probs.size() == ds.test.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    double s = 0.0;
    for (double p : probs[i]) s += p;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    const auto lp = trained.model.log_probabilities(ds.test[i]);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::exp(lp[c]) == doctest::Approx(probs[i][c]).epsilon(1e-5));
  }
  const auto ck = module_checkpoint("classifier", "{}", trained.model);
  Rng init(77, 1);
  SequenceClassifier fresh(1, 3, 4, init);
  load_module(ck, "classifier", fresh);
  CHECK(fresh.predict_proba(ds.test) == probs);
  CHECK_THROWS_AS(load_module(ck, "autoencoder", fresh), DataError);
}

TEST_CASE("auroc and evaluation reports") {
  // Positives {0.9, 0.4, 0.6} against negatives {0.5, 0.2, 0.7}: 6 of 9 pairs won.
  const std::vector<double> s{0.9, 0.4, 0.6, 0.5, 0.2, 0.7};
  const std::vector<bool> pos{true, true, true, false, false, false};
  CHECK(binary_auroc(s, pos) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  // Tied scores count one half: 8 of 9 pairs.
  const std::vector<double> s2{0.8, 0.6, 0.6, 0.6, 0.3, 0.1};
  const std::vector<bool> p2{true, true, false, true, false, false};
  CHECK(binary_auroc(s2, p2) == doctest::Approx(8.0 / 9.0).epsilon(1e-12));

  // Six samples, two classes: positives {0.9, 0.35} win 6 of 8 pairs.
  const std::vector<double> p1{0.9, 0.35, 0.8, 0.5, 0.3, 0.1};
  std::vector<std::vector<double>> two;
  for (double v : p1) two.push_back({1.0 - v, v});
  const auto r6 = evaluate_scores(two, {1, 1, 0, 0, 0, 0}, 2);
  CHECK(r6.macro_auroc == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(r6.per_class[1].auroc == doctest::Approx(0.75).epsilon(1e-12));
  const std::vector<bool> p3{true, true, true, false, false, false};
  CHECK(binary_auroc(std::vector<double>(6, 0.3), p3) == doctest::Approx(0.5));
  CHECK_THROWS_AS(binary_auroc({0.1, 0.2}, {true, true}), InputError);

  std::mt19937_64 gen(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 4 + gen() % 12;
    std::vector<double> sc(n);
    std::vector<bool> ps(n);
    for (std::size_t i = 0; i < n; ++i) {
      sc[i] = double(gen() % 5) / 4.0;
      ps[i] = i < 2 ? i == 0 : gen() % 2 == 0;
    }
    CHECK(std::abs(binary_auroc(sc, ps) - pair_count_auroc(sc, ps)) < 1e-12);
  }

  // Perfect and constant classifiers.
  std::vector<std::vector<double>> perfect{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 0}};
  const std::vector<int> labels{0, 1, 2, 0};
  const auto rp = evaluate_scores(perfect, labels, 3);
  CHECK(rp.accuracy == 100.0);
  CHECK(rp.macro_auroc == 1.0);
  const auto rc = evaluate_scores(std::vector<std::vector<double>>(4, {0.3, 0.3, 0.4}), labels, 3);
  for (const auto& m : rc.per_class) CHECK(m.auroc == doctest::Approx(0.5));

  // Internal consistency on random scores.
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> probs;
    std::vector<int> lab;
    for (int i = 0; i < 30; ++i) {
      probs.push_back({double(gen() % 100), double(gen() % 100), double(gen() % 100)});
      lab.push_back(i % 3);
    }
    const auto r = evaluate_scores(probs, lab, 3);
    double trace = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      std::int64_t row = 0;
      for (auto v : r.confusion[c]) row += v;
      CHECK(row == 10);
      trace += double(r.confusion[c][c]);
      const auto& m = r.per_class[c];
      const double f1 = m.precision + m.sensitivity > 0 ? 2 * m.precision * m.sensitivity / (m.precision + m.sensitivity) : 0.0;
      CHECK(std::abs(m.f1 - f1) < 1e-9);
    }
    CHECK(std::abs(r.accuracy - 100.0 * trace / 30.0) < 1e-12);
  }
  CHECK_THROWS_AS(evaluate_scores({{0.5, 0.5}, {0.2, 0.8}}, {1, 1}, 2), InputError);
  CHECK_THROWS_AS(evaluate_scores({}, {}, 2), InputError);
}

TEST_CASE("configuration") {
  const auto toy = toy_preset();
  auto round = parse_config(to_json(toy));
  auto fin = toy;
  finalize(fin);
  CHECK(to_json(round) == to_json(fin));
  CHECK(config_hash(round) == config_hash(fin));

  const auto full = preset("paper_scale");
  CHECK(full.schedule.T == 1000);
  CHECK(full.sampler.steps == 200);
  CHECK(full.sampler.guidance == 7.5);
  CHECK(full.autoencoder.rate == 8);
  CHECK_NOTHROW(parse_config(R"({"preset": "paper_scale"})"));

  CHECK_THROWS_AS(parse_config(R"({"colour": 1})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"sampler": {"steps": 50, "eta": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"sampler": {"steps": "many"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"sampler": {"steps": 2000}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"schedule": {"ddim_eta": 0.5}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"preset": "huge"})"), ConfigError);
  CHECK_THROWS_AS(parse_config("not json"), ConfigError);

  const auto s = parse_config(R"({"seed": 3, "classifier": {"epochs": 7}})");
  CHECK(s.classifier.epochs == 7);
  CHECK(s.seed == 3);
  CHECK(config_hash(s) != config_hash(fin));
  auto threaded = s;
  threaded.threads = 4;
  CHECK(config_hash(threaded) == config_hash(s));
  CHECK(s.dataset.seed == stage_seed(3, Stage::Dataset));
}

TEST_CASE("experiment runs, resumes and replays byte for byte") {
  const auto root = std::filesystem::temp_directory_path() / "seqaug_test_experiment";
  std::filesystem::remove_all(root);
  const auto cfg = micro_config();
  ExperimentSummary first;
  {
    Experiment exp(cfg, root / "a");
    first = exp.run_all();
  }
  CHECK(first.synthetic_clips == 12);
  CHECK(first.filtered_clips <= 12);
  CHECK(first.arms.size() == 4);

  // Resuming reuses every stage: nothing is rewritten.
  const auto manifest_before = slurp(root / "a" / "manifest.json");
  {
    Experiment exp(cfg, root / "a");
    const auto again = exp.run_all();
    CHECK(again.to_json() == first.to_json());
  }
  CHECK(slurp(root / "a" / "manifest.json") == manifest_before);

  // A fresh directory reproduces every recorded output digest.
  Experiment replay(cfg, root / "b");
  replay.run_all();
  const auto ma = nlohmann::json::parse(manifest_before);
  CHECK(ma["stages"] == replay.manifest()["stages"]);

  auto other = cfg;
  other.seed = 99;
  CHECK_THROWS_AS(Experiment(other, root / "a"), ConfigError);
  std::filesystem::remove_all(root);
}
