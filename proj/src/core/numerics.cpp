#include "seqaug/core/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "seqaug/core/error.hpp"

namespace seqaug {

template <typename T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw DimensionError("scaled_dot_product_attention expects matrices");
  if (q.dim(1) != k.dim(1)) throw DimensionError("attention: query/key feature size differs");
  if (k.dim(0) != v.dim(0)) throw DimensionError("attention: key/value count differs");
  if (q.dim(1) < 1 || k.dim(0) < 1) throw DimensionError("attention: empty feature or key axis");
  const T scale = T(1) / std::sqrt(static_cast<T>(q.dim(1)));
  auto out = attention(reshape(q, {1, q.dim(0), q.dim(1)}), reshape(k, {1, k.dim(0), k.dim(1)}),
                       reshape(v, {1, v.dim(0), v.dim(1)}), scale);
  return reshape(out, {q.dim(0), v.dim(1)});
}

template <typename T>
Tensor<T> conv_pseudo3d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  if (x.rank() != 4) throw DimensionError("conv_pseudo3d expects x [F,C,H,W]");
  if (kernel.rank() != 5 || kernel.dim(2) != 1 || kernel.dim(3) != 3 || kernel.dim(4) != 3)
    throw DimensionError("conv_pseudo3d expects a [C',C,1,3,3] kernel, got " + shape_str(kernel.shape()));
  if (kernel.dim(1) != x.dim(1)) throw DimensionError("conv_pseudo3d: channel mismatch");
  // Frames become the depth axis of a single sample; the kernel's depth of 1
  // keeps them independent.
  auto x5 = reshape(permute(x, {1, 0, 2, 3}), {1, x.dim(1), x.dim(0), x.dim(2), x.dim(3)});
  auto y = conv3d(x5, kernel, bias, Conv3dParams{{1, 1, 1}, {0, 1, 1}});
  return permute(reshape(y, {kernel.dim(0), x.dim(0), x.dim(2), x.dim(3)}), {1, 0, 2, 3});
}

double grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& x, double eps) {
  if (!(eps >= 1e-5 && eps <= 1e-3)) throw InputError("grad_check: eps must lie in [1e-5, 1e-3]");
  TensorD probe = x.detach();
  probe.set_requires_grad(true);
  TensorD out = f(probe);
  if (out.numel() != 1) throw DimensionError("grad_check: function must return a scalar");
  if (out.has_non_finite()) throw NumericError("grad_check: non-finite function value");
  out.backward();
  const std::vector<double> analytic(probe.grad().begin(), probe.grad().end());

  double worst = 0.0;
  TensorD shifted = x.detach();
  auto values = shifted.data();
  NoGradGuard guard;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + eps;
    const double up = f(shifted).item();
    values[i] = saved - eps;
    const double down = f(shifted).item();
    values[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("grad_check: non-finite intermediate");
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine_similarity: zero vector has no direction");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

double cosine_similarity(const TensorF& a, const TensorF& b) { return cosine_similarity(a.data(), b.data()); }

KMeansResult kmeans_1d(std::span<const double> values, int k, Rng* /*rng*/, int max_iterations) {
  if (k <= 0) throw InputError("kmeans_1d: K must be positive");
  if (values.size() < static_cast<std::size_t>(k)) throw InputError("kmeans_1d: fewer values than clusters");
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError("kmeans_1d: non-finite value");

  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();

  KMeansResult r;
  r.centroids.resize(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    auto idx = static_cast<std::size_t>(std::floor((i + 0.5) / k * static_cast<double>(n)));
    r.centroids[static_cast<std::size_t>(i)] = sorted[std::min(idx, n - 1)];
  }

  // Work on the sorted copy so the fixpoint is independent of input order.
  std::vector<int> assign(n, -1);
  auto nearest = [&](double v) {
    int best = 0;
    double best_d = std::abs(v - r.centroids[0]);
    for (int c = 1; c < k; ++c) {
      const double d = std::abs(v - r.centroids[static_cast<std::size_t>(c)]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    return best;
  };
  for (r.iterations = 1; r.iterations <= max_iterations; ++r.iterations) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = nearest(sorted[i]);
      changed = changed || c != assign[i];
      assign[i] = c;
    }
    if (!changed) break;
    std::vector<double> total(static_cast<std::size_t>(k), 0.0);
    std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      total[static_cast<std::size_t>(assign[i])] += sorted[i];
      ++count[static_cast<std::size_t>(assign[i])];
    }
    // Empty clusters keep their previous centroid.
    for (int c = 0; c < k; ++c)
      if (count[static_cast<std::size_t>(c)] > 0)
        r.centroids[static_cast<std::size_t>(c)] = total[static_cast<std::size_t>(c)] / static_cast<double>(count[static_cast<std::size_t>(c)]);
    std::sort(r.centroids.begin(), r.centroids.end());
  }
  r.iterations = std::min(r.iterations, max_iterations);

  r.assignments.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) r.assignments[i] = nearest(values[i]);
  return r;
}

template TensorF scaled_dot_product_attention(const TensorF&, const TensorF&, const TensorF&);
template TensorD scaled_dot_product_attention(const TensorD&, const TensorD&, const TensorD&);
template TensorF conv_pseudo3d(const TensorF&, const TensorF&, const TensorF&);
template TensorD conv_pseudo3d(const TensorD&, const TensorD&, const TensorD&);

}  // namespace seqaug
