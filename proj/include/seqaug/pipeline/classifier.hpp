#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqaug/core/clip.hpp"
#include "seqaug/core/optim.hpp"
#include "seqaug/filter/filter.hpp"
#include "seqaug/nn/layers.hpp"

namespace seqaug::pipeline {

// Traditional augmentations, each an independent toggle. One draw per clip;
// every frame of the clip gets the same transform.
struct AugmentConfig {
  bool brightness = true;
  double brightness_delta = 0.1;
  bool move = true;
  std::int64_t max_shift = 2;
  bool gaussian = true;
  double sigma = 0.02;
  bool rotation = false;
  double max_degrees = 10.0;
  bool flip = false;
};

// pixels [F, C, H, W] -> augmented copy clamped to [0, 1].
TensorF augment_clip(const TensorF& pixels, const AugmentConfig& cfg, Rng& rng);

enum class Paradigm { Baseline, RealFinetune, JointTrain };
const char* to_string(Paradigm p);
Paradigm parse_paradigm(const std::string& name);

struct ClassifierConfig {
  std::int64_t num_classes = 3;
  std::int64_t width = 8;  // channels of the first block; doubled per block
  std::int64_t epochs = 30;
  std::int64_t pretrain_epochs = 15;  // synthetic stage of RealFinetune
  std::int64_t batch = 16;
  AdamWConfig optim{2e-3, 20, 10000, 0.9, 0.999, 1e-8, 1e-4};
  AugmentConfig augment;
};

// Three Conv3d -> GroupNorm -> SiLU blocks (stride 2 in space, then in time
// and space), global average pooling and a linear head.
class SequenceClassifier : public nn::Module<float>, public filter::ClipClassifier {
 public:
  SequenceClassifier() = default;
  SequenceClassifier(std::int64_t channels, std::int64_t num_classes, std::int64_t width, Rng& rng);

  // x [N, C, F, H, W] -> logits [N, num_classes].
  TensorF forward(const TensorF& x) const;
  std::vector<double> log_probabilities(const SequenceClip& clip) const override;
  // Class probabilities of every clip, [clips][classes].
  std::vector<std::vector<double>> predict_proba(const std::vector<SequenceClip>& clips) const;
  void visit(const std::string& prefix, const nn::ParamVisitor<float>& fn) override;

  std::int64_t num_classes = 0;
  nn::Conv3d<float> conv1, conv2, conv3;
  nn::GroupNorm<float> norm1, norm2, norm3;
  nn::Linear<float> head;
};

// Clips stacked into [N, C, F, H, W], optionally augmented.
TensorF stack_clips(const std::vector<const SequenceClip*>& clips, const AugmentConfig* augment, Rng* rng);

// Stratified resampling with replacement of `real` up to `target` clips.
// Per-class quotas follow the real proportions (largest remainder), so each
// class stays within one clip of its exact share. No-op when target <= |real|.
std::vector<SequenceClip> oversample_real(const std::vector<SequenceClip>& real, std::int64_t target,
                                          std::int64_t num_classes, Rng& rng);

struct TrainedClassifier {
  SequenceClassifier model;
  std::vector<double> epoch_losses;
};

// Baseline trains on `real` only; JointTrain on oversampled real plus
// synthetic; RealFinetune on synthetic first, then on real. With no synthetic
// clips every paradigm reduces to Baseline bit for bit.
TrainedClassifier train_classifier(const std::vector<SequenceClip>& real, const std::vector<SequenceClip>& synthetic,
                                   Paradigm paradigm, const ClassifierConfig& cfg, std::uint64_t seed);

}  // namespace seqaug::pipeline
