#include "seqaug/cond/encoders.hpp"

#include <cmath>
#include <numeric>

#include "seqaug/core/error.hpp"

namespace seqaug::cond {

template <typename T>
Context<T> pad_contexts(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw InputError("no context tokens");
  const std::int64_t d = parts[0].dim(1);
  std::int64_t longest = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != d) throw DimensionError("context tokens must be [L, d] with a common d");
    if (p.dim(0) < 1) throw InputError("context must hold at least one token");
    longest = std::max(longest, p.dim(0));
  }
  Context<T> ctx;
  std::vector<Tensor<T>> rows;
  rows.reserve(parts.size());
  for (const auto& p : parts) {
    ctx.lengths.push_back(p.dim(0));
    Tensor<T> full = p;
    if (p.dim(0) < longest) full = concat<T>({p, Tensor<T>::zeros({longest - p.dim(0), d})}, 0);
    rows.push_back(reshape(full, {1, longest, d}));
  }
  ctx.tokens = rows.size() == 1 ? rows[0] : concat(rows, 0);
  return ctx;
}

template <typename T>
ClassLabelEncoder<T>::ClassLabelEncoder(std::int64_t num_classes_, std::int64_t dim, Rng& rng)
    : num_classes(num_classes_), table(num_classes_ + 1, dim, rng) {
  auto t = table.table.data();
  std::fill(t.end() - dim, t.end(), T(0));
}

template <typename T>
Tensor<T> ClassLabelEncoder<T>::forward(std::span<const std::int64_t> labels, const Tensor<T>& t_emb) const {
  if (t_emb.rank() != 2 || t_emb.dim(0) != static_cast<std::int64_t>(labels.size()) ||
      t_emb.dim(1) != table.table.dim(1))
    throw DimensionError("class embedding expects t_emb [B, dim] with one label per row");
  for (auto l : labels)
    if (l < 0 || l > num_classes) throw InputError("class label " + std::to_string(l) + " out of range");
  return add(t_emb, table.forward(labels));
}

template <typename T>
void ClassLabelEncoder<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  table.visit(nn::join_name(prefix, "table"), fn);
}

template <typename T>
TextEncoder<T>::TextEncoder(std::int64_t vocab_, std::int64_t dim, Rng& rng)
    : vocab(vocab_),
      token(vocab_, dim, rng),
      position(kMaxTokens, dim, rng),
      null_token(Tensor<T>::randn({1, dim}, rng, T(0.02), true)) {}

template <typename T>
Tensor<T> TextEncoder<T>::forward(std::span<const std::int64_t> tokens) const {
  if (tokens.empty()) return null_token;
  if (static_cast<std::int64_t>(tokens.size()) > kMaxTokens)
    throw InputError("text longer than " + std::to_string(kMaxTokens) + " tokens");
  for (auto t : tokens)
    if (t < 0 || t >= vocab) throw InputError("unknown token " + std::to_string(t));
  std::vector<std::int64_t> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), std::int64_t{0});
  return add(token.forward(tokens), position.forward(positions));
}

template <typename T>
void TextEncoder<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  token.visit(nn::join_name(prefix, "token"), fn);
  position.visit(nn::join_name(prefix, "position"), fn);
  fn(nn::join_name(prefix, "null_token"), null_token);
}

namespace {
std::int64_t conv_out(std::int64_t n, std::int64_t stride) { return (n + 2 - 3) / stride + 1; }
}  // namespace

template <typename T>
ImagePriorEncoder<T>::ImagePriorEncoder(std::int64_t channels_, std::int64_t height_, std::int64_t width_,
                                        std::int64_t hidden, std::int64_t dim_, std::array<std::int64_t, 3> strides,
                                        Rng& rng)
    : channels(channels_),
      height(height_),
      width(width_),
      dim(dim_),
      conv1(channels_, hidden, 3, strides[0], 1, rng),
      conv2(hidden, hidden, 3, strides[1], 1, rng),
      conv3(hidden, dim_, 3, strides[2], 1, rng) {
  out_h = conv_out(conv_out(conv_out(height, strides[0]), strides[1]), strides[2]);
  out_w = conv_out(conv_out(conv_out(width, strides[0]), strides[1]), strides[2]);
  pos = Tensor<T>::zeros({out_h * out_w, dim}, true);
}

template <typename T>
Tensor<T> ImagePriorEncoder<T>::forward(const Tensor<T>& frames) const {
  if (frames.rank() != 4 || frames.dim(1) != channels || frames.dim(2) != height || frames.dim(3) != width)
    throw InputError("image prior must be [B, " + std::to_string(channels) + ", " + std::to_string(height) + ", " +
                     std::to_string(width) + "], got " + shape_str(frames.shape()));
  auto h = relu(conv1.forward(frames));
  h = relu(conv2.forward(h));
  h = conv3.forward(h);
  const std::int64_t B = frames.dim(0);
  h = permute(reshape(h, {B, dim, out_h * out_w}), {0, 2, 1});
  return add(h, reshape(pos, {1, out_h * out_w, dim}));
}

template <typename T>
void ImagePriorEncoder<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  conv1.visit(nn::join_name(prefix, "conv1"), fn);
  conv2.visit(nn::join_name(prefix, "conv2"), fn);
  conv3.visit(nn::join_name(prefix, "conv3"), fn);
  fn(nn::join_name(prefix, "pos"), pos);
}

template <typename T>
DecoupledCrossAttention<T>::DecoupledCrossAttention(std::int64_t query_dim, std::int64_t context_dim,
                                                    std::int64_t inner_dim_, Rng& rng)
    : inner_dim(inner_dim_),
      q_text(query_dim, inner_dim_, rng, false),
      k_text(context_dim, inner_dim_, rng, false),
      v_text(context_dim, inner_dim_, rng, false),
      q_image(query_dim, inner_dim_, rng, false),
      k_image(context_dim, inner_dim_, rng, false),
      v_image(context_dim, inner_dim_, rng, false),
      out(inner_dim_, query_dim, rng) {
  v_image.zero_init();
  for (auto& b : out.bias.data()) b = T(0);
}

template <typename T>
Tensor<T> DecoupledCrossAttention<T>::forward(const Tensor<T>& z, const Context<T>& text,
                                              const Context<T>& image) const {
  const T s = T(1) / std::sqrt(static_cast<T>(inner_dim));
  auto a_text = attention(q_text.forward(z), k_text.forward(text.tokens), v_text.forward(text.tokens), s,
                          std::span<const std::int64_t>(text.lengths));
  auto a_image = attention(q_image.forward(z), k_image.forward(image.tokens), v_image.forward(image.tokens), s,
                           std::span<const std::int64_t>(image.lengths));
  return out.forward(add(a_text, a_image));
}

template <typename T>
void DecoupledCrossAttention<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  q_text.visit(nn::join_name(prefix, "q_text"), fn);
  k_text.visit(nn::join_name(prefix, "k_text"), fn);
  v_text.visit(nn::join_name(prefix, "v_text"), fn);
  q_image.visit(nn::join_name(prefix, "q_image"), fn);
  k_image.visit(nn::join_name(prefix, "k_image"), fn);
  v_image.visit(nn::join_name(prefix, "v_image"), fn);
  out.visit(nn::join_name(prefix, "out"), fn);
}

template <typename T>
MotionEncoder<T>::MotionEncoder(std::int64_t rate_, std::int64_t hidden, std::int64_t channels_, Rng& rng,
                                T input_scale_)
    : rate(rate_), channels(channels_), input_scale(input_scale_) {
  if (rate < 1 || (rate & (rate - 1)) != 0) throw ConfigError("motion encoder rate must be a power of two");
  std::int64_t in = 2;
  for (std::int64_t r = rate; r > 1; r /= 2) {
    down.emplace_back(in, hidden, 3, 2, 1, rng);
    in = hidden;
  }
  head = nn::Conv2d<T>(in, channels, 1, 1, 0, rng);
}

template <typename T>
Tensor<T> MotionEncoder<T>::forward(const Tensor<T>& fields) const {
  if (fields.rank() != 5 || fields.dim(2) != 2) throw DimensionError("motion fields must be [B, F-1, 2, H, W]");
  const std::int64_t B = fields.dim(0), steps = fields.dim(1), H = fields.dim(3), W = fields.dim(4);
  if (H % rate != 0 || W % rate != 0) throw DimensionError("motion field size must be divisible by the rate");
  const std::int64_t h = H / rate, w = W / rate, per = channels * h * w;
  if (steps == 0) return Tensor<T>::zeros({B, 1, channels, h, w});
  auto x = scale(reshape(fields, {B * steps, 2, H, W}), input_scale);
  for (const auto& conv : down) x = silu(conv.forward(x));
  x = reshape(head.forward(x), {B, steps, per});
  x = concat<T>({x, Tensor<T>::zeros({B, 1, per})}, 1);
  return reshape(x, {B, steps + 1, channels, h, w});
}

template <typename T>
void MotionEncoder<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  for (std::size_t i = 0; i < down.size(); ++i) down[i].visit(nn::join_name(prefix, "down" + std::to_string(i)), fn);
  head.visit(nn::join_name(prefix, "head"), fn);
}

#define SEQAUG_INSTANTIATE_COND(T)                                             \
  template Context<T> pad_contexts<T>(const std::vector<Tensor<T>>&);          \
  template class ClassLabelEncoder<T>;                                         \
  template class TextEncoder<T>;                                               \
  template class ImagePriorEncoder<T>;                                         \
  template class DecoupledCrossAttention<T>;                                   \
  template class MotionEncoder<T>;

SEQAUG_INSTANTIATE_COND(float)
SEQAUG_INSTANTIATE_COND(double)

}  // namespace seqaug::cond
