#include "seqaug/cond/conditions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "seqaug/core/error.hpp"

namespace seqaug::cond {

MotionField MotionField::zeros(std::int64_t height, std::int64_t width) {
  const auto n = static_cast<std::size_t>(height * width);
  return MotionField{height, width, std::vector<float>(n, 0.0f), std::vector<float>(n, 0.0f)};
}

float MotionField::max_abs() const {
  float m = 0.0f;
  for (float v : dy) m = std::max(m, std::abs(v));
  for (float v : dx) m = std::max(m, std::abs(v));
  return m;
}

ConditionsBank ConditionsBank::from_clip(const SequenceClip& clip, std::int64_t block, std::int64_t radius) {
  ConditionsBank bank;
  bank.class_label = clip.class_id;
  bank.text = clip.tokens;
  bank.image_prior = clip.frame(0);
  bank.motion = extract_motion_field(clip, block, radius);
  return bank;
}

std::vector<MotionField> extract_motion_field(const TensorF& pixels, std::int64_t block, std::int64_t radius) {
  if (pixels.rank() != 4) throw DimensionError("motion extraction expects [F,C,H,W]");
  const std::int64_t F = pixels.dim(0), C = pixels.dim(1), H = pixels.dim(2), W = pixels.dim(3);
  if (F < 2) throw InputError("motion extraction needs at least two frames");
  if (block < 1 || H % block != 0 || W % block != 0) throw InputError("block must divide the frame size");
  if (radius < 0) throw InputError("search radius must be non-negative");

  // Candidates in preference order so the first strict minimum wins ties.
  struct Cand {
    std::int64_t dy, dx;
  };
  std::vector<Cand> cands;
  for (std::int64_t dy = -radius; dy <= radius; ++dy)
    for (std::int64_t dx = -radius; dx <= radius; ++dx) cands.push_back({dy, dx});
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Cand& a, const Cand& b) { return a.dy * a.dy + a.dx * a.dx < b.dy * b.dy + b.dx * b.dx; });

  const auto px = pixels.data();
  const std::int64_t plane = H * W, frame = C * plane;
  std::vector<MotionField> out;
  out.reserve(static_cast<std::size_t>(F - 1));
  for (std::int64_t f = 0; f + 1 < F; ++f) {
    MotionField field = MotionField::zeros(H, W);
    const float* a = px.data() + f * frame;
    const float* b = a + frame;
    for (std::int64_t by = 0; by < H; by += block) {
      for (std::int64_t bx = 0; bx < W; bx += block) {
        double best = std::numeric_limits<double>::infinity();
        Cand pick{0, 0};
        for (const Cand& c : cands) {
          if (by + c.dy < 0 || by + c.dy + block > H || bx + c.dx < 0 || bx + c.dx + block > W) continue;
          double sad = 0.0;
          for (std::int64_t ch = 0; ch < C && sad < best; ++ch)
            for (std::int64_t y = 0; y < block; ++y) {
              const float* ra = a + ch * plane + (by + y) * W + bx;
              const float* rb = b + ch * plane + (by + y + c.dy) * W + bx + c.dx;
              for (std::int64_t x = 0; x < block; ++x) sad += std::abs(static_cast<double>(ra[x]) - rb[x]);
            }
          if (sad < best) {
            best = sad;
            pick = c;
          }
        }
        for (std::int64_t y = by; y < by + block; ++y)
          for (std::int64_t x = bx; x < bx + block; ++x) {
            field.dy[static_cast<std::size_t>(y * W + x)] = static_cast<float>(pick.dy);
            field.dx[static_cast<std::size_t>(y * W + x)] = static_cast<float>(pick.dx);
          }
      }
    }
    out.push_back(std::move(field));
  }
  return out;
}

std::vector<MotionField> extract_motion_field(const SequenceClip& clip, std::int64_t block, std::int64_t radius) {
  return extract_motion_field(clip.pixels, block, radius);
}

TensorF motion_tensor(const std::vector<MotionField>& fields) {
  if (fields.empty()) throw InputError("no motion fields");
  const std::int64_t H = fields[0].height, W = fields[0].width;
  std::vector<float> data;
  data.reserve(fields.size() * 2 * static_cast<std::size_t>(H * W));
  for (const auto& f : fields) {
    if (f.height != H || f.width != W) throw DimensionError("motion fields differ in size");
    data.insert(data.end(), f.dy.begin(), f.dy.end());
    data.insert(data.end(), f.dx.begin(), f.dx.end());
  }
  return TensorF({static_cast<std::int64_t>(fields.size()), 2, H, W}, std::move(data));
}

ConditionsBank drop_conditions(const ConditionsBank& bank, Rng& rng, const DropConfig& cfg) {
  for (double p : {cfg.p_class, cfg.p_text, cfg.p_image, cfg.p_motion, cfg.p_all})
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("drop probabilities must lie in [0,1]");
  const double u_all = rng.uniform();
  const double u_class = rng.uniform();
  const double u_text = rng.uniform();
  const double u_image = rng.uniform();
  const double u_motion = rng.uniform();
  if (u_all < cfg.p_all) return ConditionsBank::null();
  ConditionsBank out = bank;
  if (u_class < cfg.p_class) out.class_label.reset();
  if (u_text < cfg.p_text) out.text.reset();
  if (u_image < cfg.p_image) out.image_prior.reset();
  if (u_motion < cfg.p_motion) out.motion.reset();
  return out;
}

}  // namespace seqaug::cond
