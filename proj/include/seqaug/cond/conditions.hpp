#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "seqaug/core/clip.hpp"
#include "seqaug/core/rng.hpp"
#include "seqaug/core/tensor.hpp"

namespace seqaug::cond {

// Per-pixel displacement between frame f and f+1, in pixels; dy grows
// downward and dx grows to the right.
struct MotionField {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<float> dy;
  std::vector<float> dx;

  static MotionField zeros(std::int64_t height, std::int64_t width);
  float max_abs() const;
};

// Control signals for one generation group. Any subset may be absent; an
// absent condition is replaced by its null form downstream.
struct ConditionsBank {
  std::optional<int> class_label;
  std::optional<std::vector<std::int64_t>> text;
  std::optional<TensorF> image_prior;               // [C, H, W]
  std::optional<std::vector<MotionField>> motion;  // F - 1 entries

  bool empty() const { return !class_label && !text && !image_prior && !motion; }
  static ConditionsBank null() { return {}; }
  // Every condition taken from a real clip: its class, tokens, first frame
  // and block-matched motion.
  static ConditionsBank from_clip(const SequenceClip& clip, std::int64_t block = 4, std::int64_t radius = 3);
};

// Exhaustive block matching of every frame against its successor. For each
// block the integer displacement in [-radius, radius]^2 with the lowest sum of
// absolute differences wins; ties go to the smaller norm, then to the
// lexicographically smaller (dy, dx). Candidates that leave the frame are
// skipped.
std::vector<MotionField> extract_motion_field(const TensorF& pixels, std::int64_t block = 4, std::int64_t radius = 3);
std::vector<MotionField> extract_motion_field(const SequenceClip& clip, std::int64_t block = 4,
                                              std::int64_t radius = 3);

// Fields stacked as [F-1, 2, H, W] with channel 0 = dy, 1 = dx.
TensorF motion_tensor(const std::vector<MotionField>& fields);

struct DropConfig {
  double p_class = 0.1;
  double p_text = 0.1;
  double p_image = 0.1;
  double p_motion = 0.1;
  double p_all = 0.1;
};

// Replaces present conditions by their null forms at random. Always consumes
// exactly five uniforms so the stream position does not depend on the bank.
ConditionsBank drop_conditions(const ConditionsBank& bank, Rng& rng, const DropConfig& cfg = {});

}  // namespace seqaug::cond
