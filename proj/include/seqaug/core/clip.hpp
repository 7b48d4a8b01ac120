#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqaug/core/tensor.hpp"

namespace seqaug {

enum class ClipSource { Real, Synthetic };

inline const char* to_string(ClipSource s) { return s == ClipSource::Real ? "real" : "synthetic"; }

// F x C x H x W pixel sequence in [0, 1] with its metadata; the unit of
// generation, filtering and classification.
struct SequenceClip {
  std::string id;
  TensorF pixels;  // [F, C, H, W]
  int class_id = 0;
  std::vector<std::int64_t> tokens;  // attribute text
  ClipSource source = ClipSource::Real;

  std::int64_t frames() const { return pixels.dim(0); }
  std::int64_t channels() const { return pixels.dim(1); }
  std::int64_t height() const { return pixels.dim(2); }
  std::int64_t width() const { return pixels.dim(3); }
  // Frame f as [C, H, W].
  TensorF frame(std::int64_t f) const;
};

// Throws DataError unless the clip is rank-4 with values in [0, 1].
void validate_clip(const SequenceClip& clip);

}  // namespace seqaug
