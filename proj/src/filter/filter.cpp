#include "seqaug/filter/filter.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "seqaug/core/error.hpp"
#include "seqaug/core/numerics.hpp"

namespace seqaug::filter {

namespace {

ClipDecision& decision_for(FilterReport& report, const SequenceClip& clip, std::int64_t group_id) {
  for (auto& d : report.decisions)
    if (d.clip_id == clip.id) return d;
  ClipDecision d;
  d.clip_id = clip.id;
  d.group_id = group_id;
  d.class_id = clip.class_id;
  report.decisions.push_back(d);
  return report.decisions.back();
}

std::int64_t clip_count(const std::vector<SyntheticGroup>& groups) {
  std::int64_t n = 0;
  for (const auto& g : groups) n += static_cast<std::int64_t>(g.clips.size());
  return n;
}

std::int64_t nonempty_groups(const std::vector<SyntheticGroup>& groups) {
  return std::count_if(groups.begin(), groups.end(), [](const SyntheticGroup& g) { return !g.clips.empty(); });
}

}  // namespace

std::vector<std::vector<float>> AutoencoderFrameEncoder::encode_frames(const SequenceClip& clip) const {
  NoGradGuard guard;
  const auto mean = ae_.posterior(clip.pixels).mean;
  const std::int64_t F = mean.dim(0);
  const std::int64_t per = mean.numel() / F;
  std::vector<std::vector<float>> out;
  for (std::int64_t f = 0; f < F; ++f)
    out.emplace_back(mean.data().begin() + f * per, mean.data().begin() + (f + 1) * per);
  return out;
}

double vae_seq_from_latents(const std::vector<std::vector<float>>& latents) {
  if (latents.size() < 2) throw InputError("VAE-Seq needs at least two frames");
  double total = 0.0;
  for (std::size_t f = 0; f + 1 < latents.size(); ++f) total += cosine_similarity(latents[f], latents[f + 1]);
  return 100.0 * total / static_cast<double>(latents.size() - 1);
}

double compute_vae_seq(const SequenceClip& clip, const FrameEncoder& encoder) {
  if (clip.frames() < 2) throw InputError("VAE-Seq needs at least two frames");
  return vae_seq_from_latents(encoder.encode_frames(clip));
}

double inter_clip_similarity_from_latents(const std::vector<std::vector<float>>& a,
                                          const std::vector<std::vector<float>>& b) {
  if (a.size() != b.size() || a.empty()) throw InputError("inter-clip similarity needs equal, non-zero frame counts");
  double total = 0.0;
  for (std::size_t f = 0; f < a.size(); ++f) total += cosine_similarity(a[f], b[f]);
  return 100.0 * total / static_cast<double>(a.size());
}

double inter_clip_similarity(const SequenceClip& a, const SequenceClip& b, const FrameEncoder& encoder) {
  if (a.frames() != b.frames()) throw InputError("inter-clip similarity needs equal frame counts");
  return inter_clip_similarity_from_latents(encoder.encode_frames(a), encoder.encode_frames(b));
}

double dynamic_smoothness(const SequenceClip& clip) {
  const std::int64_t F = clip.frames();
  if (F < 3) throw InputError("dynamic smoothness needs at least three frames");
  const std::int64_t per = clip.pixels.numel() / F;
  const auto px = clip.pixels.data();
  double err = 0.0;
  for (std::int64_t f = 1; f + 1 < F; ++f)
    for (std::int64_t i = 0; i < per; ++i) {
      const double mid = 0.5 * (double(px[(f - 1) * per + i]) + double(px[(f + 1) * per + i]));
      err += std::abs(mid - double(px[f * per + i]));
    }
  return 100.0 * (1.0 - err / static_cast<double>((F - 2) * per));
}

double ModelMetrics::loss(const SequenceClip& clip, std::int64_t class_id) {
  const auto lp = classifier_.log_probabilities(clip);
  if (class_id < 0 || class_id >= static_cast<std::int64_t>(lp.size()))
    throw InputError("clip " + clip.id + " has no class the classifier knows");
  return -lp[static_cast<std::size_t>(class_id)];
}

const std::vector<std::vector<float>>& ModelMetrics::latents(const SequenceClip& clip) {
  auto it = cache_.find(clip.id);
  if (it == cache_.end()) it = cache_.emplace(clip.id, encoder_.encode_frames(clip)).first;
  return it->second;
}

double ModelMetrics::vae_seq(const SequenceClip& clip) { return vae_seq_from_latents(latents(clip)); }

double ModelMetrics::similarity(const SequenceClip& a, const SequenceClip& b) {
  return inter_clip_similarity_from_latents(latents(a), latents(b));
}

std::vector<SyntheticGroup> stage1_semantic_filter(const std::vector<SyntheticGroup>& groups, FilterMetrics& metrics,
                                                   FilterReport& report) {
  std::vector<SyntheticGroup> out;
  for (const auto& g : groups) {
    SyntheticGroup kept{g.group_id, g.bank, {}};
    if (g.clips.empty()) {
      report.notices.push_back("stage1: group " + std::to_string(g.group_id) + " is empty and was skipped");
      out.push_back(std::move(kept));
      continue;
    }
    std::vector<double> losses;
    for (const auto& clip : g.clips) {
      if (clip.class_id < 0) throw InputError("stage1: clip " + clip.id + " carries no class");
      losses.push_back(metrics.loss(clip, clip.class_id));
      auto& d = decision_for(report, clip, g.group_id);
      d.loss = losses.back();
      d.has_loss = true;
    }
    double mean = 0.0;
    for (double l : losses) mean += l;
    mean /= static_cast<double>(losses.size());
    report.group_thresholds[g.group_id] = mean;
    for (std::size_t j = 0; j < g.clips.size(); ++j) {
      if (losses[j] <= mean)
        kept.clips.push_back(g.clips[j]);
      else
        decision_for(report, g.clips[j], g.group_id).dropped_at = "stage1";
    }
    out.push_back(std::move(kept));
  }
  return out;
}

StageTwoBounds stage2_bounds(const std::vector<double>& all_values, int clusters) {
  if (clusters < 3) throw ConfigError("stage 2 needs at least three clusters");
  if (static_cast<int>(all_values.size()) < clusters)
    throw ConfigError("stage 2 needs at least " + std::to_string(clusters) + " VAE-Seq values, got " +
                      std::to_string(all_values.size()));
  const auto km = kmeans_1d(all_values, clusters);
  StageTwoBounds b;
  bool any = false;
  for (std::size_t i = 0; i < all_values.size(); ++i) {
    const int c = km.assignments[i];
    if (c == 0 || c == clusters - 1) continue;
    b.low = any ? std::min(b.low, all_values[i]) : all_values[i];
    b.high = any ? std::max(b.high, all_values[i]) : all_values[i];
    any = true;
  }
  if (!any) {
    // Degenerate clustering (fewer than three distinct groups): keep everything.
    const auto [lo, hi] = std::minmax_element(all_values.begin(), all_values.end());
    b.low = *lo;
    b.high = *hi;
  }
  return b;
}

std::vector<SyntheticGroup> stage2_inner_sequence_filter(const std::vector<SyntheticGroup>& all_groups,
                                                         const std::vector<SyntheticGroup>& survivors,
                                                         FilterMetrics& metrics, const FilterConfig& cfg,
                                                         FilterReport& report) {
  const auto& source = cfg.stage2_thresholds_from_s1 ? survivors : all_groups;
  std::vector<double> A;
  for (const auto& g : source)
    for (const auto& clip : g.clips) {
      const double v = metrics.vae_seq(clip);
      report.values_all[clip.id] = v;
      auto& d = decision_for(report, clip, g.group_id);
      d.vae_seq = v;
      d.has_vae_seq = true;
      A.push_back(v);
    }
  const auto bounds = stage2_bounds(A, cfg.clusters);
  report.stage2_ran = true;
  report.t_low = bounds.low;
  report.t_high = bounds.high;

  std::vector<SyntheticGroup> out;
  for (const auto& g : survivors) {
    SyntheticGroup kept{g.group_id, g.bank, {}};
    for (const auto& clip : g.clips) {
      auto it = report.values_all.find(clip.id);
      const double v = it != report.values_all.end() ? it->second : metrics.vae_seq(clip);
      report.values_survivors[clip.id] = v;
      auto& d = decision_for(report, clip, g.group_id);
      d.vae_seq = v;
      d.has_vae_seq = true;
      if (v >= bounds.low && v <= bounds.high)
        kept.clips.push_back(clip);
      else
        d.dropped_at = "stage2";
    }
    out.push_back(std::move(kept));
  }
  return out;
}

std::vector<SequenceClip> stage3_inter_sequence_filter(const std::vector<SyntheticGroup>& groups,
                                                       FilterMetrics& metrics, const FilterConfig& cfg,
                                                       FilterReport& report) {
  std::vector<SequenceClip> kept;
  for (const auto& g : groups) {
    if (g.clips.empty()) continue;
    const auto& first = g.clips.front();
    for (const auto& prior : kept) {
      const double v = metrics.similarity(first, prior);
      if (v >= cfg.similarity_threshold) {
        report.duplicate_first_clips.push_back(first.id);
        break;
      }
    }
    kept.push_back(first);
    for (std::size_t j = 1; j < g.clips.size(); ++j) {
      const auto& clip = g.clips[j];
      bool admit = true;
      for (const auto& prior : kept) {
        const double v = metrics.similarity(clip, prior);
        report.similarity_checks.push_back({clip.id, prior.id, v});
        if (!(v < cfg.similarity_threshold)) {
          admit = false;
          break;
        }
      }
      if (admit)
        kept.push_back(clip);
      else
        decision_for(report, clip, g.group_id).dropped_at = "stage3";
    }
  }
  return kept;
}

FilterResult run_filter_pipeline(const std::vector<SyntheticGroup>& groups, FilterMetrics& metrics,
                                 const FilterConfig& cfg) {
  FilterResult res;
  auto& rep = res.report;
  for (const auto& g : groups)
    for (const auto& clip : g.clips) decision_for(rep, clip, g.group_id);
  rep.n = static_cast<std::int64_t>(groups.size());
  rep.N = clip_count(groups);

  auto s1 = cfg.semantic ? stage1_semantic_filter(groups, metrics, rep) : groups;
  if (!cfg.semantic) rep.notices.push_back("stage1 disabled");
  rep.n1 = nonempty_groups(s1);
  rep.N1 = clip_count(s1);

  auto s2 = s1;
  if (cfg.inner_sequence) {
    try {
      s2 = stage2_inner_sequence_filter(groups, s1, metrics, cfg, rep);
    } catch (const ConfigError& e) {
      rep.notices.push_back(std::string("stage2 disabled: ") + e.what());
    }
  } else {
    rep.notices.push_back("stage2 disabled");
  }
  rep.n2 = nonempty_groups(s2);
  rep.N2 = clip_count(s2);

  if (cfg.inter_sequence) {
    res.kept = stage3_inter_sequence_filter(s2, metrics, cfg, rep);
  } else {
    rep.notices.push_back("stage3 disabled");
    for (const auto& g : s2) res.kept.insert(res.kept.end(), g.clips.begin(), g.clips.end());
  }
  rep.N3 = static_cast<std::int64_t>(res.kept.size());
  return res;
}

std::string FilterReport::to_json() const {
  using nlohmann::ordered_json;
  ordered_json j;
  j["counts"] = {{"n", n}, {"N", N}, {"n1", n1}, {"N1", N1}, {"n2", n2}, {"N2", N2}, {"N3", N3}};
  ordered_json lc = ordered_json::object();
  for (const auto& [g, v] : group_thresholds) lc[std::to_string(g)] = v;
  j["group_thresholds"] = lc;
  j["stage2"] = {{"ran", stage2_ran}, {"t_low", t_low}, {"t_high", t_high},
                 {"values_all", values_all}, {"values_survivors", values_survivors}};
  ordered_json checks = ordered_json::array();
  for (const auto& c : similarity_checks) checks.push_back({{"clip", c.clip_id}, {"against", c.against}, {"value", c.value}});
  j["similarity_checks"] = checks;
  j["duplicate_first_clips"] = duplicate_first_clips;
  j["notices"] = notices;
  ordered_json clips = ordered_json::array();
  for (const auto& d : decisions) {
    ordered_json c{{"id", d.clip_id}, {"group", d.group_id}, {"class", d.class_id}};
    c["loss"] = d.has_loss ? ordered_json(d.loss) : ordered_json(nullptr);
    c["vae_seq"] = d.has_vae_seq ? ordered_json(d.vae_seq) : ordered_json(nullptr);
    c["dropped_at"] = d.dropped_at.empty() ? ordered_json(nullptr) : ordered_json(d.dropped_at);
    clips.push_back(c);
  }
  j["clips"] = clips;
  return j.dump(2);
}

std::string FilterReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "groups " << n << ", clips " << N << "\n";
  os << "after stage 1: " << n1 << " groups, " << N1 << " clips\n";
  os << "after stage 2: " << n2 << " groups, " << N2 << " clips";
  if (stage2_ran) os << " (range [" << t_low << ", " << t_high << "])";
  os << "\n";
  os << "after stage 3: " << N3 << " clips\n";
  for (const auto& [g, v] : group_thresholds) os << "  group " << g << " mean loss " << v << "\n";
  for (const auto& id : duplicate_first_clips) os << "  note: group-first clip " << id << " duplicates a kept clip\n";
  for (const auto& msg : notices) os << "  note: " << msg << "\n";
  return os.str();
}

std::string FilterReport::to_table() const {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "clip_id\tgroup\tclass\tloss\tvae_seq\tdecision\n";
  for (const auto& d : decisions) {
    os << d.clip_id << '\t' << d.group_id << '\t' << d.class_id << '\t';
    if (d.has_loss) os << d.loss;
    os << '\t';
    if (d.has_vae_seq) os << d.vae_seq;
    os << '\t' << (d.dropped_at.empty() ? "kept" : "dropped_" + d.dropped_at) << '\n';
  }
  return os.str();
}

}  // namespace seqaug::filter
