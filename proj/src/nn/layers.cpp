#include "seqaug/nn/layers.hpp"

#include <cmath>
#include <map>

#include "seqaug/core/error.hpp"

namespace seqaug::nn {

namespace {

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for dense and
// convolutional layers.
template <typename T>
Tensor<T> fan_in_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng) {
  const T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
  return Tensor<T>::uniform(shape, rng, -bound, bound, true);
}

template <typename T>
void visit_opt(const std::string& prefix, const char* name, Tensor<T>& t, const ParamVisitor<T>& fn) {
  if (t.defined()) fn(join_name(prefix, name), t);
}

}  // namespace

template <typename T>
Linear<T>::Linear(std::int64_t in, std::int64_t out, Rng& rng, bool with_bias)
    : weight(fan_in_uniform<T>({out, in}, in, rng)) {
  if (with_bias) bias = fan_in_uniform<T>({out}, in, rng);
}

template <typename T>
void Linear<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  fn(join_name(prefix, "weight"), weight);
  visit_opt(prefix, "bias", bias, fn);
}

template <typename T>
void Linear<T>::zero_init() {
  for (auto& w : weight.data()) w = T(0);
  if (bias.defined())
    for (auto& b : bias.data()) b = T(0);
}

template <typename T>
Conv2d<T>::Conv2d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride_, std::int64_t padding_,
                  Rng& rng)
    : weight(fan_in_uniform<T>({out, in, kernel, kernel}, in * kernel * kernel, rng)),
      bias(fan_in_uniform<T>({out}, in * kernel * kernel, rng)),
      stride(stride_),
      padding(padding_) {}

template <typename T>
void Conv2d<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  fn(join_name(prefix, "weight"), weight);
  visit_opt(prefix, "bias", bias, fn);
}

template <typename T>
void Conv2d<T>::zero_init() {
  for (auto& w : weight.data()) w = T(0);
  for (auto& b : bias.data()) b = T(0);
}

template <typename T>
Conv3d<T>::Conv3d(std::int64_t in, std::int64_t out, std::array<std::int64_t, 3> k, Conv3dParams p, Rng& rng)
    : weight(fan_in_uniform<T>({out, in, k[0], k[1], k[2]}, in * k[0] * k[1] * k[2], rng)),
      bias(fan_in_uniform<T>({out}, in * k[0] * k[1] * k[2], rng)),
      params(p) {}

template <typename T>
void Conv3d<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  fn(join_name(prefix, "weight"), weight);
  visit_opt(prefix, "bias", bias, fn);
}

template <typename T>
GroupNorm<T>::GroupNorm(std::int64_t groups_, std::int64_t channels)
    : groups(groups_), gamma(Tensor<T>::full({channels}, T(1), true)), beta(Tensor<T>::zeros({channels}, true)) {
  if (channels % groups_ != 0) throw ConfigError("GroupNorm: channels must be divisible by groups");
}

template <typename T>
void GroupNorm<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  fn(join_name(prefix, "gamma"), gamma);
  fn(join_name(prefix, "beta"), beta);
}

template <typename T>
LayerNorm<T>::LayerNorm(std::int64_t channels)
    : gamma(Tensor<T>::full({channels}, T(1), true)), beta(Tensor<T>::zeros({channels}, true)) {}

template <typename T>
void LayerNorm<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  fn(join_name(prefix, "gamma"), gamma);
  fn(join_name(prefix, "beta"), beta);
}

template <typename T>
Embedding<T>::Embedding(std::int64_t count, std::int64_t dim, Rng& rng, T stddev)
    : table(Tensor<T>::randn({count, dim}, rng, stddev, true)) {}

template <typename T>
Tensor<T> Embedding<T>::forward(std::span<const std::int64_t> ids) const {
  for (auto id : ids)
    if (id < 0 || id >= table.dim(0)) throw InputError("embedding id " + std::to_string(id) + " out of range");
  return index_select(table, 0, ids);
}

template <typename T>
void Embedding<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  fn(join_name(prefix, "table"), table);
}

template <typename T>
Tensor<T> timestep_embedding(std::span<const std::int64_t> steps, std::int64_t dim) {
  if (dim % 2 != 0) throw ConfigError("timestep embedding dimension must be even");
  const std::int64_t half = dim / 2;
  auto out = Tensor<T>::zeros({static_cast<std::int64_t>(steps.size()), dim});
  auto o = out.data();
  for (std::size_t i = 0; i < steps.size(); ++i)
    for (std::int64_t j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) / static_cast<double>(half));
      const double arg = static_cast<double>(steps[i]) * freq;
      o[static_cast<std::int64_t>(i) * dim + j] = static_cast<T>(std::cos(arg));
      o[static_cast<std::int64_t>(i) * dim + half + j] = static_cast<T>(std::sin(arg));
    }
  return out;
}

template <typename T>
void copy_parameters(Module<T>& dst, Module<T>& src) {
  std::map<std::string, Tensor<T>> from;
  src.visit("", [&](const std::string& n, Tensor<T>& p) { from.emplace(n, p); });
  dst.visit("", [&](const std::string& n, Tensor<T>& p) {
    auto it = from.find(n);
    if (it == from.end()) throw StateError("copy_parameters: source lacks " + n);
    if (it->second.shape() != p.shape()) throw DimensionError("copy_parameters: shape mismatch for " + n);
    std::copy(it->second.data().begin(), it->second.data().end(), p.data().begin());
  });
}

#define SEQAUG_INSTANTIATE_LAYERS(T)                                           \
  template class Linear<T>;                                                    \
  template class Conv2d<T>;                                                    \
  template class Conv3d<T>;                                                    \
  template class GroupNorm<T>;                                                 \
  template class LayerNorm<T>;                                                 \
  template class Embedding<T>;                                                 \
  template Tensor<T> timestep_embedding<T>(std::span<const std::int64_t>, std::int64_t); \
  template void copy_parameters<T>(Module<T>&, Module<T>&);

SEQAUG_INSTANTIATE_LAYERS(float)
SEQAUG_INSTANTIATE_LAYERS(double)

}  // namespace seqaug::nn
