#include <cmath>

#include "seqaug/core/error.hpp"
#include "seqaug/sam/sam.hpp"

namespace seqaug::sam {

template <typename T>
Tensor<T> frames_to_sites(const Tensor<T>& x, std::int64_t frames) {
  if (x.rank() != 3 || frames < 1 || x.dim(0) % frames != 0) throw DimensionError("expected tokens [B*F, S, C]");
  const std::int64_t B = x.dim(0) / frames, S = x.dim(1), C = x.dim(2);
  return reshape(permute(reshape(x, {B, frames, S, C}), {0, 2, 1, 3}), {B * S, frames, C});
}

template <typename T>
Tensor<T> sites_to_frames(const Tensor<T>& x, std::int64_t batch) {
  if (x.rank() != 3 || batch < 1 || x.dim(0) % batch != 0) throw DimensionError("expected tokens [B*S, F, C]");
  const std::int64_t S = x.dim(0) / batch, F = x.dim(1), C = x.dim(2);
  return reshape(permute(reshape(x, {batch, S, F, C}), {0, 2, 1, 3}), {batch * F, S, C});
}

template <typename T>
Tensor<T> motion_field_attention(const Tensor<T>& x, std::span<const PatchPathwaySet> pathways) {
  if (x.rank() != 3) throw DimensionError("motion field attention expects [B*F, S, C]");
  if (pathways.empty()) throw InputError("no pathway sets");
  const auto B = static_cast<std::int64_t>(pathways.size());
  const std::int64_t F = pathways[0].frames, S = x.dim(1), C = x.dim(2);
  if (x.dim(0) != B * F) throw DimensionError("token batch does not match pathway sets");
  for (const auto& set : pathways)
    if (set.frames != F || set.count() != S)
      throw DimensionError("pathway grid " + std::to_string(set.grid_h) + "x" + std::to_string(set.grid_w) +
                           " does not match " + std::to_string(S) + " tokens");

  // gather[j] = flat token row for slot j = (b, pathway, frame).
  std::vector<std::int64_t> gather(static_cast<std::size_t>(B * S * F));
  std::vector<std::int64_t> scatter(gather.size());
  std::size_t j = 0;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t p = 0; p < S; ++p)
      for (std::int64_t l = 0; l < F; ++l, ++j) {
        const std::int64_t row = (b * F + l) * S + pathways[static_cast<std::size_t>(b)].cell(p, l);
        gather[j] = row;
        scatter[static_cast<std::size_t>(row)] = static_cast<std::int64_t>(j);
      }
  auto flat = reshape(x, {B * F * S, C});
  auto paths = reshape(index_select(flat, 0, std::span<const std::int64_t>(gather)), {B * S, F, C});
  const T s = T(1) / std::sqrt(static_cast<T>(C));
  auto mixed = reshape(attention(paths, paths, paths, s), {B * S * F, C});
  return reshape(index_select(mixed, 0, std::span<const std::int64_t>(scatter)), {B * F, S, C});
}

template <typename T>
TemporalAttention<T>::TemporalAttention(std::int64_t channels, Rng& rng)
    : norm(channels),
      q(channels, channels, rng, false),
      k(channels, channels, rng, false),
      v(channels, channels, rng, false),
      out(channels, channels, rng) {
  out.zero_init();
}

template <typename T>
Tensor<T> TemporalAttention<T>::forward(const Tensor<T>& x, std::int64_t frames) const {
  const std::int64_t B = x.dim(0) / frames;
  auto h = frames_to_sites(norm.forward(x), frames);
  const T s = T(1) / std::sqrt(static_cast<T>(x.dim(2)));
  auto a = attention(q.forward(h), k.forward(h), v.forward(h), s);
  return add(x, out.forward(sites_to_frames(a, B)));
}

template <typename T>
void TemporalAttention<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  norm.visit(nn::join_name(prefix, "norm"), fn);
  q.visit(nn::join_name(prefix, "q"), fn);
  k.visit(nn::join_name(prefix, "k"), fn);
  v.visit(nn::join_name(prefix, "v"), fn);
  out.visit(nn::join_name(prefix, "out"), fn);
}

template <typename T>
KeyFrameAttention<T>::KeyFrameAttention(std::int64_t channels, Rng& rng)
    : q(channels, channels, rng, false), k(channels, channels, rng, false), v(channels, channels, rng, false) {}

template <typename T>
void KeyFrameAttention<T>::init_from(const nn::Linear<T>& q_src, const nn::Linear<T>& k_src,
                                     const nn::Linear<T>& v_src) {
  for (auto [dst, src] : {std::pair{&q, &q_src}, std::pair{&k, &k_src}, std::pair{&v, &v_src}}) {
    if (dst->weight.shape() != src->weight.shape()) throw DimensionError("key-frame projection shape mismatch");
    std::copy(src->weight.data().begin(), src->weight.data().end(), dst->weight.data().begin());
  }
}

template <typename T>
Tensor<T> KeyFrameAttention<T>::forward(const Tensor<T>& h, std::int64_t frames) const {
  if (h.rank() != 3 || h.dim(0) % frames != 0) throw DimensionError("expected tokens [B*F, S, C]");
  const std::int64_t N = h.dim(0);
  std::vector<std::int64_t> first(static_cast<std::size_t>(N)), prev(static_cast<std::size_t>(N));
  for (std::int64_t i = 0; i < N; ++i) {
    const std::int64_t b = i / frames, l = i % frames;
    first[static_cast<std::size_t>(i)] = b * frames;
    prev[static_cast<std::size_t>(i)] = b * frames + std::max<std::int64_t>(l - 1, 0);
  }
  auto kk = k.forward(h), vv = v.forward(h);
  auto keys = concat<T>({index_select(kk, 0, std::span<const std::int64_t>(first)),
                         index_select(kk, 0, std::span<const std::int64_t>(prev))},
                        1);
  auto values = concat<T>({index_select(vv, 0, std::span<const std::int64_t>(first)),
                           index_select(vv, 0, std::span<const std::int64_t>(prev))},
                          1);
  const T s = T(1) / std::sqrt(static_cast<T>(h.dim(2)));
  return attention(q.forward(h), keys, values, s);
}

template <typename T>
void KeyFrameAttention<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  q.visit(nn::join_name(prefix, "q"), fn);
  k.visit(nn::join_name(prefix, "k"), fn);
  v.visit(nn::join_name(prefix, "v"), fn);
}

template <typename T>
SamBlock<T>::SamBlock(std::int64_t channels, Rng& rng) : norm(channels), ka(channels, rng), out(channels, channels, rng) {
  out.zero_init();
}

template <typename T>
Tensor<T> SamBlock<T>::forward(const Tensor<T>& x, std::span<const PatchPathwaySet> pathways) const {
  if (pathways.empty()) throw InputError("no pathway sets");
  const std::int64_t frames = pathways[0].frames;
  auto h = ka.forward(norm.forward(x), frames);
  return add(x, out.forward(motion_field_attention(h, pathways)));
}

template <typename T>
void SamBlock<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  norm.visit(nn::join_name(prefix, "norm"), fn);
  ka.visit(nn::join_name(prefix, "ka"), fn);
  out.visit(nn::join_name(prefix, "out"), fn);
}

#define SEQAUG_INSTANTIATE_SAM(T)                                                        \
  template Tensor<T> frames_to_sites<T>(const Tensor<T>&, std::int64_t);                 \
  template Tensor<T> sites_to_frames<T>(const Tensor<T>&, std::int64_t);                 \
  template Tensor<T> motion_field_attention<T>(const Tensor<T>&, std::span<const PatchPathwaySet>); \
  template class TemporalAttention<T>;                                                   \
  template class KeyFrameAttention<T>;                                                   \
  template class SamBlock<T>;

SEQAUG_INSTANTIATE_SAM(float)
SEQAUG_INSTANTIATE_SAM(double)

}  // namespace seqaug::sam
