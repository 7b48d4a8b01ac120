#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "seqaug/core/error.hpp"
#include "seqaug/filter/filter.hpp"

using namespace seqaug;
using namespace seqaug::filter;

namespace {

// Latent of each frame is `scale` times its pixels.
class LinearEncoder : public FrameEncoder {
 public:
  explicit LinearEncoder(float scale = 1.0f) : scale_(scale) {}
  std::vector<std::vector<float>> encode_frames(const SequenceClip& clip) const override {
    const std::int64_t per = clip.pixels.numel() / clip.frames();
    std::vector<std::vector<float>> out;
    for (std::int64_t f = 0; f < clip.frames(); ++f) {
      std::vector<float> v(clip.pixels.data().begin() + f * per, clip.pixels.data().begin() + (f + 1) * per);
      for (auto& x : v) x *= scale_;
      out.push_back(std::move(v));
    }
    return out;
  }

 private:
  float scale_;
};

// Every metric read from a table; unlisted similarities are 0.
class PinnedMetrics : public FilterMetrics {
 public:
  std::map<std::string, double> losses, vae;
  std::map<std::pair<std::string, std::string>, double> theta;

  double loss(const SequenceClip& c, std::int64_t) override { return losses.at(c.id); }
  double vae_seq(const SequenceClip& c) override { return vae.at(c.id); }
  double similarity(const SequenceClip& a, const SequenceClip& b) override {
    if (auto it = theta.find({a.id, b.id}); it != theta.end()) return it->second;
    if (auto it = theta.find({b.id, a.id}); it != theta.end()) return it->second;
    return 0.0;
  }
};

SequenceClip clip_from(const std::string& id, std::int64_t frames, std::int64_t pixels,
                       const std::function<float(std::int64_t, std::int64_t)>& value, std::int64_t cls = 0) {
  SequenceClip c;
  c.id = id;
  c.class_id = cls;
  std::vector<float> px(static_cast<std::size_t>(frames * pixels));
  for (std::int64_t f = 0; f < frames; ++f)
    for (std::int64_t i = 0; i < pixels; ++i) px[static_cast<std::size_t>(f * pixels + i)] = value(f, i);
  c.pixels = TensorF({frames, 1, 1, pixels}, std::move(px));
  return c;
}

SequenceClip stub(const std::string& id, std::int64_t cls = 0) {
  return clip_from(id, 2, 1, [](std::int64_t, std::int64_t) { return 0.5f; }, cls);
}

SyntheticGroup group_of(std::int64_t gid, const std::vector<std::string>& ids, std::int64_t cls = 0) {
  SyntheticGroup g;
  g.group_id = gid;
  g.bank.class_label = cls;
  for (const auto& id : ids) g.clips.push_back(stub(id, cls));
  return g;
}

std::vector<std::string> ids_of(const std::vector<SequenceClip>& clips) {
  std::vector<std::string> out;
  for (const auto& c : clips) out.push_back(c.id);
  return out;
}

// Minimum within-cluster sum of squares over every split of sorted values
// into four contiguous non-empty runs; returns the middle runs' extent.
std::pair<double, double> best_partition_bounds(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  auto sse = [&](std::size_t a, std::size_t b) {
    double m = 0.0;
    for (std::size_t i = a; i < b; ++i) m += v[i];
    m /= double(b - a);
    double s = 0.0;
    for (std::size_t i = a; i < b; ++i) s += (v[i] - m) * (v[i] - m);
    return s;
  };
  double best = std::numeric_limits<double>::infinity();
  std::pair<double, double> out;
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t k = j + 1; k < n; ++k) {
        const double s = sse(0, i) + sse(i, j) + sse(j, k) + sse(k, n);
        if (s < best) {
          best = s;
          out = {v[i], v[k - 1]};
        }
      }
  return out;
}

}  // namespace

TEST_CASE("stage 1 keeps clips at or below the group mean loss") {
  PinnedMetrics m;
  m.losses = {{"a", 0.2}, {"b", 0.4}, {"c", 0.9}, {"d", 0.3}, {"e", 0.3}};
  FilterReport rep;
  const std::vector<SyntheticGroup> groups{group_of(0, {"a", "b", "c"}), group_of(1, {"d", "e"}), group_of(2, {})};
  const auto out = stage1_semantic_filter(groups, m, rep);
  CHECK(ids_of(out[0].clips) == std::vector<std::string>{"a", "b"});
  CHECK(ids_of(out[1].clips) == std::vector<std::string>{"d", "e"});
  CHECK(out[2].clips.empty());
  CHECK(rep.group_thresholds.at(0) == doctest::Approx(0.5));
  REQUIRE(rep.notices.size() == 1);
  CHECK(rep.notices[0].find("group 2") != std::string::npos);

  SUBCASE("every non-empty group keeps a clip") {
    Rng rng(3, 0);
    for (int trial = 0; trial < 50; ++trial) {
      PinnedMetrics r;
      std::vector<SyntheticGroup> gs;
      for (int g = 0; g < 4; ++g) {
        std::vector<std::string> ids;
        for (int j = 0; j < 1 + int(rng.below(5)); ++j) {
          ids.push_back("g" + std::to_string(g) + "c" + std::to_string(j));
          r.losses[ids.back()] = rng.uniform(0.0, 3.0);
        }
        gs.push_back(group_of(g, ids));
      }
      FilterReport fr;
      for (const auto& g : stage1_semantic_filter(gs, r, fr)) CHECK_FALSE(g.clips.empty());
    }
  }
}

TEST_CASE("stage 2 cluster bounds") {
  const std::vector<double> A{10, 11, 40, 41, 60, 61, 95, 96};
  const auto b = stage2_bounds(A);
  CHECK(b.low == 40.0);
  CHECK(b.high == 61.0);
  CHECK(best_partition_bounds(A) == std::make_pair(40.0, 61.0));

  SUBCASE("matches the exhaustive partition on separated data") {
    Rng rng(9, 0);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<double> v;
      for (double centre : {5.0, 35.0, 65.0, 95.0})
        for (int j = 0; j < 2 + int(rng.below(3)); ++j) v.push_back(centre + rng.uniform(-3.0, 3.0));
      std::shuffle(v.begin(), v.end(), std::mt19937(trial));
      const auto got = stage2_bounds(v);
      const auto want = best_partition_bounds(v);
      CHECK(got.low == want.first);
      CHECK(got.high == want.second);
    }
  }

  SUBCASE("identical values keep everything") {
    const auto same = stage2_bounds({70, 70, 70, 70, 70});
    CHECK(same.low == 70.0);
    CHECK(same.high == 70.0);
  }

  CHECK_THROWS_AS(stage2_bounds({1, 2, 3}), ConfigError);

  SUBCASE("filter keeps the inclusive range of the survivors") {
    PinnedMetrics m;
    const std::vector<std::string> ids{"a", "b", "c", "d", "e", "f", "g", "h"};
    for (std::size_t i = 0; i < ids.size(); ++i) m.vae[ids[i]] = A[i];
    const std::vector<SyntheticGroup> all{group_of(0, ids)};
    // Survivors exclude the 40 clip; A still spans everything.
    const std::vector<SyntheticGroup> s1{group_of(0, {"a", "d", "e", "f", "g"})};
    FilterReport rep;
    FilterConfig cfg;
    const auto s2 = stage2_inner_sequence_filter(all, s1, m, cfg, rep);
    CHECK(ids_of(s2[0].clips) == std::vector<std::string>{"d", "e", "f"});
    CHECK(rep.t_low == 40.0);
    CHECK(rep.t_high == 61.0);
    CHECK(rep.values_all.size() == 8);
    CHECK(rep.values_survivors.size() == 5);

    cfg.stage2_thresholds_from_s1 = true;
    FilterReport rep2;
    stage2_inner_sequence_filter(all, s1, m, cfg, rep2);
    CHECK(rep2.values_all.size() == 5);
  }
}

TEST_CASE("stage 3 admits group-first clips and rejects near duplicates") {
  PinnedMetrics m;
  SUBCASE("group of identical clips keeps only the first") {
    m.theta = {{{"b", "a"}, 100.0}, {{"c", "a"}, 100.0}, {{"c", "b"}, 100.0}};
    FilterReport rep;
    const auto kept = stage3_inter_sequence_filter({group_of(0, {"a", "b", "c"})}, m, {}, rep);
    CHECK(ids_of(kept) == std::vector<std::string>{"a"});
  }
  SUBCASE("dissimilar clips all survive") {
    FilterReport rep;
    const auto kept = stage3_inter_sequence_filter({group_of(0, {"a", "b"}), group_of(1, {"c"})}, m, {}, rep);
    CHECK(kept.size() == 3);
    CHECK(rep.similarity_checks.size() == 1);
  }
  SUBCASE("first clip of a later group bypasses the check") {
    m.theta = {{{"c", "a"}, 100.0}, {{"d", "a"}, 97.9}, {{"d", "c"}, 98.0}};
    FilterReport rep;
    const auto kept =
        stage3_inter_sequence_filter({group_of(0, {"a", "b"}), group_of(1, {"c", "d"})}, m, {}, rep);
    CHECK(ids_of(kept) == std::vector<std::string>{"a", "b", "c"});
    CHECK(rep.duplicate_first_clips == std::vector<std::string>{"c"});
  }
}

TEST_CASE("sequence metrics") {
  LinearEncoder enc;
  const auto stat = clip_from("s", 4, 6, [](std::int64_t, std::int64_t i) { return 0.1f * float(i + 1); });
  CHECK(compute_vae_seq(stat, enc) == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(dynamic_smoothness(stat) == doctest::Approx(100.0).epsilon(1e-9));

  // Frame f lights pixel f only, so consecutive latents are orthogonal.
  const auto ortho = clip_from("o", 4, 4, [](std::int64_t f, std::int64_t i) { return f == i ? 1.0f : 0.0f; });
  CHECK(compute_vae_seq(ortho, enc) == doctest::Approx(0.0));
  const auto shifted = clip_from("p", 4, 4, [](std::int64_t f, std::int64_t i) { return (f + 1) % 4 == i ? 1.0f : 0.0f; });
  CHECK(inter_clip_similarity(ortho, shifted, enc) == doctest::Approx(0.0));
  CHECK(inter_clip_similarity(ortho, ortho, enc) == doctest::Approx(100.0).epsilon(1e-12));

  const auto linear = clip_from("l", 5, 3, [](std::int64_t f, std::int64_t i) { return 0.1f * float(f) + 0.05f * float(i); });
  CHECK(dynamic_smoothness(linear) == doctest::Approx(100.0).epsilon(1e-6));
  // Frames 0,0,1,1,0,0: every interior frame has one agreeing and one opposite
  // neighbour, so the midpoint is off by 0.5 everywhere.
  const auto paired = clip_from("a", 6, 8, [](std::int64_t f, std::int64_t) { return (f / 2) % 2 ? 1.0f : 0.0f; });
  CHECK(std::abs(dynamic_smoothness(paired) - 50.0) < 1e-6);
  // Strict 0,1,0,1 flicker: both neighbours disagree, so the error is 1.
  const auto flicker = clip_from("f", 5, 8, [](std::int64_t f, std::int64_t) { return f % 2 ? 1.0f : 0.0f; });
  CHECK(std::abs(dynamic_smoothness(flicker)) < 1e-6);

  SUBCASE("symmetry and scale invariance") {
    Rng rng(4, 0);
    LinearEncoder scaled(3.5f);
    for (int i = 0; i < 50; ++i) {
      auto a = clip_from("x", 3, 10, [&](std::int64_t, std::int64_t) { return float(rng.uniform(0.01, 1.0)); });
      auto b = clip_from("y", 3, 10, [&](std::int64_t, std::int64_t) { return float(rng.uniform(0.01, 1.0)); });
      CHECK(std::abs(inter_clip_similarity(a, b, enc) - inter_clip_similarity(b, a, enc)) < 1e-9);
      CHECK(inter_clip_similarity(a, b, scaled) == doctest::Approx(inter_clip_similarity(a, b, enc)).epsilon(1e-6));
      CHECK(compute_vae_seq(a, scaled) == doctest::Approx(compute_vae_seq(a, enc)).epsilon(1e-6));
    }
  }

  SUBCASE("errors") {
    const auto one = clip_from("1", 1, 3, [](std::int64_t, std::int64_t) { return 0.5f; });
    const auto two = clip_from("2", 2, 3, [](std::int64_t, std::int64_t) { return 0.5f; });
    CHECK_THROWS_AS(compute_vae_seq(one, enc), InputError);
    CHECK_THROWS_AS(dynamic_smoothness(two), InputError);
    CHECK_THROWS_AS(inter_clip_similarity(two, stat, enc), InputError);
    const auto dark = clip_from("z", 2, 3, [](std::int64_t, std::int64_t) { return 0.0f; });
    CHECK_THROWS_AS(compute_vae_seq(dark, enc), NumericError);
  }

  SUBCASE("autoencoder latents at rate 8") {
    Rng rng(1, 0);
    diffusion::AutoencoderConfig cfg;
    cfg.channels = 3;
    cfg.height = cfg.width = 256;
    cfg.rate = 8;
    cfg.hidden = 4;
    diffusion::Autoencoder<float> ae(cfg, rng);
    SequenceClip c;
    c.id = "big";
    c.pixels = TensorF::uniform({2, 3, 256, 256}, rng, 0.0f, 1.0f);
    AutoencoderFrameEncoder fe(ae);
    const auto lat = fe.encode_frames(c);
    REQUIRE(lat.size() == 2);
    CHECK(lat[0].size() == 4096);
  }
}

TEST_CASE("filter pipeline") {
  // Three groups of four with pinned values, traced by hand.
  PinnedMetrics m;
  const std::vector<std::vector<double>> losses{{0.1, 0.2, 0.3, 1.0}, {0.5, 0.5, 0.5, 0.5}, {2.0, 0.1, 0.1, 0.2}};
  const std::vector<std::vector<double>> vae{{40, 41, 10, 60}, {61, 95, 11, 40}, {96, 60, 61, 41}};
  std::vector<SyntheticGroup> groups;
  for (int g = 0; g < 3; ++g) {
    std::vector<std::string> ids;
    for (int j = 0; j < 4; ++j) {
      ids.push_back("g" + std::to_string(g) + "-" + std::to_string(j));
      m.losses[ids.back()] = losses[g][j];
      m.vae[ids.back()] = vae[g][j];
    }
    groups.push_back(group_of(g, ids, g));
  }
  m.theta[{"g0-1", "g0-0"}] = 99.0;
  m.theta[{"g1-0", "g0-0"}] = 99.5;
  m.theta[{"g1-1", "g1-0"}] = 50.0;  // g1-1 falls in stage 2 anyway
  m.theta[{"g2-2", "g1-0"}] = 98.0;

  const auto res = run_filter_pipeline(groups, m);
  // Stage 1 means: 0.4, 0.5, 0.6 -> drop g0-3, g2-0.
  // Stage 2 A over all twelve: clusters {10,11} {40,40,41,41} {60,60,61,61} {95,96} -> [40, 61].
  // Stage 2 drops g0-2 (10), g1-1 (95), g1-2 (11).
  // Stage 3: g0-0 kept, g0-1 dropped (99 vs g0-0), g1-0 first clip, g1-3 kept,
  //          g2-1 first clip, g2-2 dropped (98 vs g1-0), g2-3 kept.
  CHECK(res.report.t_low == 40.0);
  CHECK(res.report.t_high == 61.0);
  CHECK(ids_of(res.kept) == std::vector<std::string>{"g0-0", "g1-0", "g1-3", "g2-1", "g2-3"});
  const auto& r = res.report;
  CHECK(r.N == 12);
  CHECK(r.N1 == 10);
  CHECK(r.N2 == 7);
  CHECK(r.N3 == 5);
  CHECK(r.duplicate_first_clips == std::vector<std::string>{"g1-0"});

  SUBCASE("serialisation") {
    const auto json = r.to_json();
    CHECK(json.find("\"N3\": 5") != std::string::npos);
    const auto table = r.to_table();
    CHECK(std::count(table.begin(), table.end(), '\n') == 13);
    CHECK(table.find("g0-3\t0\t0\t1\t60\tdropped_stage1") != std::string::npos);
    CHECK(r.to_text().find("after stage 3: 5 clips") != std::string::npos);
    CHECK(run_filter_pipeline(groups, m).report.to_json() == json);
  }

  SUBCASE("disabled stages are the identity") {
    FilterConfig off;
    off.semantic = off.inner_sequence = off.inter_sequence = false;
    const auto id = run_filter_pipeline(groups, m, off);
    REQUIRE(id.kept.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) CHECK(id.kept[i].id == groups[i / 4].clips[i % 4].id);
  }

  SUBCASE("too few values disables stage 2 with a notice") {
    const auto small = run_filter_pipeline({group_of(0, {"g0-0", "g0-1", "g0-2"})}, m);
    CHECK_FALSE(small.report.stage2_ran);
    CHECK(small.report.N2 == small.report.N1);
    bool noted = false;
    for (const auto& n : small.report.notices) noted = noted || n.find("stage2 disabled") != std::string::npos;
    CHECK(noted);
  }

  SUBCASE("monotone shrinkage on random fixtures") {
    Rng rng(17, 0);
    for (int trial = 0; trial < 100; ++trial) {
      PinnedMetrics pm;
      std::vector<SyntheticGroup> gs;
      const int G = 1 + int(rng.below(4));
      for (int g = 0; g < G; ++g) {
        std::vector<std::string> ids;
        const int M = int(rng.below(5));
        for (int j = 0; j < M; ++j) {
          ids.push_back("t" + std::to_string(g) + "-" + std::to_string(j));
          pm.losses[ids.back()] = rng.uniform(0.0, 2.0);
          pm.vae[ids.back()] = rng.uniform(0.0, 100.0);
        }
        gs.push_back(group_of(g, ids));
      }
      for (auto& g1 : gs)
        for (auto& a : g1.clips)
          for (auto& g2 : gs)
            for (auto& b : g2.clips)
              if (a.id < b.id) pm.theta[{a.id, b.id}] = rng.uniform(90.0, 100.0);
      FilterConfig cfg;
      cfg.semantic = rng.bernoulli(0.8);
      cfg.inner_sequence = rng.bernoulli(0.8);
      const auto fr = run_filter_pipeline(gs, pm, cfg);
      CHECK(fr.report.N >= fr.report.N1);
      CHECK(fr.report.N1 >= fr.report.N2);
      CHECK(fr.report.N2 >= fr.report.N3);
      CHECK(fr.report.n1 <= fr.report.n);
    }
  }
}
