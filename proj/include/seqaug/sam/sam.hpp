#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "seqaug/cond/conditions.hpp"
#include "seqaug/core/ops.hpp"
#include "seqaug/core/rng.hpp"
#include "seqaug/nn/layers.hpp"

// Token layout used throughout: [B*F, S, C] with frames folded into the batch
// (frame-major within each sample) and S = h*w spatial sites in row-major order.
namespace seqaug::sam {

// One pathway per cell of the (H/m) x (W/m) grid, each visiting one cell per
// frame. cells[p * frames + l] is the row-major cell index of pathway p at
// frame l. For every frame the pathways cover each cell exactly once.
struct PatchPathwaySet {
  std::int64_t frames = 0;
  std::int64_t grid_h = 0;
  std::int64_t grid_w = 0;
  std::int64_t scale = 1;
  std::vector<std::int64_t> cells;

  std::int64_t count() const { return grid_h * grid_w; }
  std::int64_t slots() const { return count() * frames; }
  std::int64_t cell(std::int64_t pathway, std::int64_t frame) const {
    return cells[static_cast<std::size_t>(pathway * frames + frame)];
  }
  bool is_partition() const;
};

// Traces every frame-0 cell through the m-downsampled fields. Cell motion is
// the mean pixel displacement over the cell divided by m, rounded half away
// from zero; positions clamp to the grid. When several pathways land on one
// cell, a seeded uniform draw picks the one that stays and the others, in
// increasing pathway order, move to the nearest free cell (squared distance,
// row-major tie-break). Empty `fields` means zero motion.
PatchPathwaySet sample_patch_pathways(std::span<const cond::MotionField> fields, std::int64_t height,
                                      std::int64_t width, std::int64_t m, std::int64_t frames, Rng& rng);

// One pathway set per sample; entry b of `fields` may be empty.
std::vector<PatchPathwaySet> sample_batch_pathways(std::span<const std::vector<cond::MotionField>> fields,
                                                   std::int64_t height, std::int64_t width, std::int64_t m,
                                                   std::int64_t frames, Rng& rng);

// [B*F, S, C] <-> [B*S, F, C].
template <typename T> Tensor<T> frames_to_sites(const Tensor<T>& x, std::int64_t frames);
template <typename T> Tensor<T> sites_to_frames(const Tensor<T>& x, std::int64_t batch);

// Projection-free attention among the patches of each pathway, written back
// to the patch positions. x [B*F, S, C] with one pathway set per sample.
template <typename T>
Tensor<T> motion_field_attention(const Tensor<T>& x, std::span<const PatchPathwaySet> pathways);

// Attention across frames at each spatial site.
template <typename T>
class TemporalAttention : public nn::Module<T> {
 public:
  TemporalAttention() = default;
  TemporalAttention(std::int64_t channels, Rng& rng);

  // x + out(attn(norm(x))) for x [B*F, S, C].
  Tensor<T> forward(const Tensor<T>& x, std::int64_t frames) const;
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) override;

  nn::LayerNorm<T> norm;
  nn::Linear<T> q, k, v, out;
};

// Per frame l, queries from frame l attend to all patches of frames 0 and
// max(l-1, 0).
template <typename T>
class KeyFrameAttention : public nn::Module<T> {
 public:
  KeyFrameAttention() = default;
  KeyFrameAttention(std::int64_t channels, Rng& rng);

  void init_from(const nn::Linear<T>& q_src, const nn::Linear<T>& k_src, const nn::Linear<T>& v_src);
  Tensor<T> forward(const Tensor<T>& h, std::int64_t frames) const;
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) override;

  nn::Linear<T> q, k, v;
};

// x + out(MFA(KA(norm(x)))). MFA holds no parameters.
template <typename T>
class SamBlock : public nn::Module<T> {
 public:
  SamBlock() = default;
  SamBlock(std::int64_t channels, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, std::span<const PatchPathwaySet> pathways) const;
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) override;

  nn::LayerNorm<T> norm;
  KeyFrameAttention<T> ka;
  nn::Linear<T> out;
};

}  // namespace seqaug::sam
