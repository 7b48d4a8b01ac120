#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seqaug/core/clip.hpp"

namespace seqaug::pipeline {

// Procedural moving-shape sequences. Class 0: textured disc moving right by
// 2 px/frame. Class 1: textured square moving down by 2 px/frame. Class 2:
// textured disc oscillating horizontally. Backgrounds carry a static texture.
struct ToyDatasetSpec {
  std::int64_t num_classes = 3;
  std::vector<std::int64_t> train_counts{100, 25, 25};
  std::vector<std::int64_t> test_counts{20, 20, 20};
  std::int64_t frames = 8;
  std::int64_t size = 32;  // square frames, one channel
  double noise = 0.06;     // per-pixel Gaussian sigma
  double contrast = 0.25;  // mean object-minus-background brightness
  std::uint64_t seed = 0;
};

// Attribute token ids (vocabulary size 16).
enum Token : std::int64_t {
  kTokDisc = 1,
  kTokSquare = 2,
  kTokDim = 3,
  kTokBright = 4,
  kTokRight = 5,
  kTokDown = 6,
  kTokOscillate = 7,
  kTokSmall = 8,
  kTokLarge = 9,
};
inline constexpr std::int64_t kVocabSize = 16;

struct ToyDataset {
  std::vector<SequenceClip> train;
  std::vector<SequenceClip> test;
};

void validate_spec(const ToyDatasetSpec& spec);
ToyDataset make_toy_dataset(const ToyDatasetSpec& spec);
// One clip of class `label` drawn from `rng`.
SequenceClip make_toy_clip(const ToyDatasetSpec& spec, std::int64_t label, Rng& rng, const std::string& id);

std::vector<std::int64_t> class_counts(const std::vector<SequenceClip>& clips, std::int64_t num_classes);

// Clip sets on disk: one tensor file per clip plus a JSON manifest listing
// id, file, class, tokens, source and split.
void save_clip_set(const std::filesystem::path& dir, const std::string& split, const std::vector<SequenceClip>& clips);
std::vector<SequenceClip> load_clip_set(const std::filesystem::path& dir, const std::string& split);

}  // namespace seqaug::pipeline
