#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "seqaug/core/clip.hpp"
#include "seqaug/diffusion/autoencoder.hpp"
#include "seqaug/diffusion/sampler.hpp"

namespace seqaug::filter {

using diffusion::SyntheticGroup;

// Flattened latent of every frame of a clip.
class FrameEncoder {
 public:
  virtual ~FrameEncoder() = default;
  virtual std::vector<std::vector<float>> encode_frames(const SequenceClip& clip) const = 0;
};

// Posterior means of a fitted autoencoder.
class AutoencoderFrameEncoder : public FrameEncoder {
 public:
  explicit AutoencoderFrameEncoder(const diffusion::Autoencoder<float>& ae) : ae_(ae) {}
  std::vector<std::vector<float>> encode_frames(const SequenceClip& clip) const override;

 private:
  const diffusion::Autoencoder<float>& ae_;
};

// Class scores of a classifier trained on real clips.
class ClipClassifier {
 public:
  virtual ~ClipClassifier() = default;
  virtual std::vector<double> log_probabilities(const SequenceClip& clip) const = 0;
};

// Mean cosine similarity of consecutive frame latents, in percent.
double compute_vae_seq(const SequenceClip& clip, const FrameEncoder& encoder);
double vae_seq_from_latents(const std::vector<std::vector<float>>& latents);

// Mean cosine similarity of index-aligned frame latents of two clips, in percent.
double inter_clip_similarity(const SequenceClip& a, const SequenceClip& b, const FrameEncoder& encoder);
double inter_clip_similarity_from_latents(const std::vector<std::vector<float>>& a,
                                          const std::vector<std::vector<float>>& b);

// 100 * (1 - MAE) of interior frames against the midpoint of their neighbours.
double dynamic_smoothness(const SequenceClip& clip);

// Per-clip quantities the stages consume. Implementations must be pure.
class FilterMetrics {
 public:
  virtual ~FilterMetrics() = default;
  virtual double loss(const SequenceClip& clip, std::int64_t class_id) = 0;
  virtual double vae_seq(const SequenceClip& clip) = 0;
  virtual double similarity(const SequenceClip& a, const SequenceClip& b) = 0;
};

// Cross-entropy from a classifier, latents from an encoder (cached by clip id).
class ModelMetrics : public FilterMetrics {
 public:
  ModelMetrics(const ClipClassifier& classifier, const FrameEncoder& encoder)
      : classifier_(classifier), encoder_(encoder) {}
  double loss(const SequenceClip& clip, std::int64_t class_id) override;
  double vae_seq(const SequenceClip& clip) override;
  double similarity(const SequenceClip& a, const SequenceClip& b) override;

 private:
  const std::vector<std::vector<float>>& latents(const SequenceClip& clip);

  const ClipClassifier& classifier_;
  const FrameEncoder& encoder_;
  std::map<std::string, std::vector<std::vector<float>>> cache_;
};

struct FilterConfig {
  bool semantic = true;        // stage 1
  bool inner_sequence = true;  // stage 2
  bool inter_sequence = true;  // stage 3
  int clusters = 4;
  double similarity_threshold = 98.0;
  // Fit the stage-2 clusters on the stage-1 survivors instead of the full set.
  bool stage2_thresholds_from_s1 = false;
};

struct ClipDecision {
  std::string clip_id;
  std::int64_t group_id = 0;
  std::int64_t class_id = 0;
  double loss = 0.0;
  double vae_seq = 0.0;
  bool has_loss = false;
  bool has_vae_seq = false;
  std::string dropped_at;  // "stage1", "stage2", "stage3" or empty when kept
};

struct SimilarityCheck {
  std::string clip_id;
  std::string against;
  double value = 0.0;
};

struct FilterReport {
  std::int64_t n = 0, N = 0;    // input groups, clips
  std::int64_t n1 = 0, N1 = 0;  // after stage 1
  std::int64_t n2 = 0, N2 = 0;  // after stage 2
  std::int64_t N3 = 0;
  std::map<std::int64_t, double> group_thresholds;  // L_c per group id
  bool stage2_ran = false;
  double t_low = 0.0, t_high = 0.0;
  std::map<std::string, double> values_all;        // A
  std::map<std::string, double> values_survivors;  // B
  std::vector<SimilarityCheck> similarity_checks;
  std::vector<std::string> duplicate_first_clips;  // group-first clips with similarity >= threshold
  std::vector<std::string> notices;
  std::vector<ClipDecision> decisions;

  std::string to_json() const;
  std::string to_text() const;
  // One tab-separated row per clip with a header line.
  std::string to_table() const;
};

// Keeps clip x of each group iff loss(x) <= mean loss of its group.
std::vector<SyntheticGroup> stage1_semantic_filter(const std::vector<SyntheticGroup>& groups, FilterMetrics& metrics,
                                                   FilterReport& report);

struct StageTwoBounds {
  double low = 0.0, high = 0.0;
};

// t_l / t_h from K-means on `all_values`: the smallest and largest values of
// the middle clusters (every cluster but the lowest and highest).
StageTwoBounds stage2_bounds(const std::vector<double>& all_values, int clusters = 4);

// Keeps clips whose VAE-Seq lies in [t_l, t_h]; `all_groups` supplies A.
std::vector<SyntheticGroup> stage2_inner_sequence_filter(const std::vector<SyntheticGroup>& all_groups,
                                                         const std::vector<SyntheticGroup>& survivors,
                                                         FilterMetrics& metrics, const FilterConfig& cfg,
                                                         FilterReport& report);

// Greedy pass in group order: every group's first clip is admitted; later
// clips need similarity below the threshold against everything kept so far.
std::vector<SequenceClip> stage3_inter_sequence_filter(const std::vector<SyntheticGroup>& groups,
                                                       FilterMetrics& metrics, const FilterConfig& cfg,
                                                       FilterReport& report);

struct FilterResult {
  std::vector<SequenceClip> kept;
  FilterReport report;
};

FilterResult run_filter_pipeline(const std::vector<SyntheticGroup>& groups, FilterMetrics& metrics,
                                 const FilterConfig& cfg = {});

}  // namespace seqaug::filter
