#include "seqaug/core/clip.hpp"

#include <cmath>

#include "seqaug/core/error.hpp"

namespace seqaug {

TensorF SequenceClip::frame(std::int64_t f) const {
  if (f < 0 || f >= frames()) throw InputError("frame index out of range");
  const std::int64_t n = channels() * height() * width();
  auto start = pixels.data().begin() + f * n;
  return TensorF({channels(), height(), width()}, std::vector<float>(start, start + n));
}

void validate_clip(const SequenceClip& clip) {
  if (!clip.pixels.defined() || clip.pixels.rank() != 4)
    throw DataError("clip " + clip.id + " must be [F,C,H,W]");
  for (float v : clip.pixels.data())
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError("clip " + clip.id + " has pixel values outside [0,1]");
}

}  // namespace seqaug
