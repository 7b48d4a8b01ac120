#include "seqaug/diffusion/autoencoder.hpp"

#include "seqaug/core/error.hpp"

namespace seqaug::diffusion {

template <typename T>
DownBlock<T>::DownBlock(std::int64_t in, std::int64_t out, Rng& rng)
    : down(in, out, 3, 2, 1, rng), conv(out, out, 3, 1, 1, rng) {}

template <typename T>
Tensor<T> DownBlock<T>::forward(const Tensor<T>& x) const {
  return silu(conv.forward(silu(down.forward(x))));
}

template <typename T>
void DownBlock<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  down.visit(nn::join_name(prefix, "down"), fn);
  conv.visit(nn::join_name(prefix, "conv"), fn);
}

template <typename T>
UpBlock<T>::UpBlock(std::int64_t in, std::int64_t out, Rng& rng)
    : conv1(in, out, 3, 1, 1, rng), conv2(out, out, 3, 1, 1, rng) {}

template <typename T>
Tensor<T> UpBlock<T>::forward(const Tensor<T>& x) const {
  return silu(conv2.forward(silu(conv1.forward(upsample_nearest(x, 2)))));
}

template <typename T>
void UpBlock<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  conv1.visit(nn::join_name(prefix, "conv1"), fn);
  conv2.visit(nn::join_name(prefix, "conv2"), fn);
}

template <typename T>
Autoencoder<T>::Autoencoder(const AutoencoderConfig& c, Rng& rng)
    : cfg(c),
      enc_in(c.channels, c.hidden, 3, 1, 1, rng),
      enc_out(c.hidden, 2 * c.latent_channels, 3, 1, 1, rng),
      dec_in(c.latent_channels, c.hidden, 3, 1, 1, rng),
      dec_out(c.hidden, c.channels, 3, 1, 1, rng) {
  if (c.rate < 1 || (c.rate & (c.rate - 1)) != 0) throw ConfigError("autoencoder rate must be a power of two");
  if (c.height % c.rate != 0 || c.width % c.rate != 0) throw ConfigError("rate must divide the frame size");
  for (std::int64_t r = c.rate; r > 1; r /= 2) {
    enc_blocks.emplace_back(c.hidden, c.hidden, rng);
    dec_blocks.emplace_back(c.hidden, c.hidden, rng);
  }
}

template <typename T>
typename Autoencoder<T>::Posterior Autoencoder<T>::posterior(const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != cfg.channels || x.dim(2) != cfg.height || x.dim(3) != cfg.width)
    throw DimensionError("autoencoder input must be [N, " + std::to_string(cfg.channels) + ", " +
                         std::to_string(cfg.height) + ", " + std::to_string(cfg.width) + "], got " +
                         shape_str(x.shape()));
  auto h = silu(enc_in.forward(x));
  for (const auto& b : enc_blocks) h = b.forward(h);
  h = enc_out.forward(h);
  return {slice(h, 1, 0, cfg.latent_channels), slice(h, 1, cfg.latent_channels, cfg.latent_channels)};
}

template <typename T>
Tensor<T> Autoencoder<T>::decode_unscaled(const Tensor<T>& z) const {
  if (z.rank() != 4 || z.dim(1) != cfg.latent_channels || z.dim(2) != latent_height() || z.dim(3) != latent_width())
    throw DimensionError("latent must be [N, " + std::to_string(cfg.latent_channels) + ", " +
                         std::to_string(latent_height()) + ", " + std::to_string(latent_width()) + "], got " +
                         shape_str(z.shape()));
  auto h = silu(dec_in.forward(z));
  for (const auto& b : dec_blocks) h = b.forward(h);
  return sigmoid(dec_out.forward(h));
}

template <typename T>
Tensor<T> Autoencoder<T>::encode(const Tensor<T>& x) const {
  return scale(posterior(x).mean, latent_scale);
}

template <typename T>
Tensor<T> Autoencoder<T>::decode(const Tensor<T>& z) const {
  return decode_unscaled(scale(z, T(1) / latent_scale));
}

template <typename T>
Tensor<T> Autoencoder<T>::loss(const Tensor<T>& x, Rng& rng) const {
  auto post = posterior(x);
  auto noise = Tensor<T>::randn(post.mean.shape(), rng);
  auto z = add(post.mean, mul(exp(scale(post.logvar, T(0.5))), noise));
  auto recon = mse_loss(decode_unscaled(z), x);
  auto var = exp(post.logvar);
  auto kl = scale(mean(sub(add_scalar(add(mul(post.mean, post.mean), var), T(-1)), post.logvar)), T(0.5));
  return add(recon, scale(kl, static_cast<T>(cfg.kl_weight)));
}

template <typename T>
void Autoencoder<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  enc_in.visit(nn::join_name(prefix, "enc_in"), fn);
  for (std::size_t i = 0; i < enc_blocks.size(); ++i)
    enc_blocks[i].visit(nn::join_name(prefix, "enc" + std::to_string(i)), fn);
  enc_out.visit(nn::join_name(prefix, "enc_out"), fn);
  dec_in.visit(nn::join_name(prefix, "dec_in"), fn);
  for (std::size_t i = 0; i < dec_blocks.size(); ++i)
    dec_blocks[i].visit(nn::join_name(prefix, "dec" + std::to_string(i)), fn);
  dec_out.visit(nn::join_name(prefix, "dec_out"), fn);
}

template class DownBlock<float>;
template class DownBlock<double>;
template class UpBlock<float>;
template class UpBlock<double>;
template class Autoencoder<float>;
template class Autoencoder<double>;

}  // namespace seqaug::diffusion
