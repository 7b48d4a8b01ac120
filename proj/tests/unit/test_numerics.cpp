#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "seqaug/core/error.hpp"
#include "seqaug/core/numerics.hpp"
#include "seqaug/core/optim.hpp"
#include "seqaug/nn/layers.hpp"

using namespace seqaug;

namespace {

// Optimal 1-D partition into k contiguous groups by exhaustive enumeration of
// cut points; returns group means.
std::vector<double> best_contiguous_partition(std::vector<double> v, int k) {
  std::sort(v.begin(), v.end());
  const int n = static_cast<int>(v.size());
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_means;
  std::vector<int> cuts(static_cast<std::size_t>(k - 1));
  std::function<void(int, int)> rec = [&](int depth, int start) {
    if (depth == k - 1) {
      std::vector<int> bounds{0};
      bounds.insert(bounds.end(), cuts.begin(), cuts.end());
      bounds.push_back(n);
      double cost = 0;
      std::vector<double> means;
      for (int g = 0; g < k; ++g) {
        double m = 0;
        for (int i = bounds[g]; i < bounds[g + 1]; ++i) m += v[i];
        m /= bounds[g + 1] - bounds[g];
        for (int i = bounds[g]; i < bounds[g + 1]; ++i) cost += (v[i] - m) * (v[i] - m);
        means.push_back(m);
      }
      if (cost < best) {
        best = cost;
        best_means = means;
      }
      return;
    }
    for (int c = start; c <= n - (k - 1 - depth); ++c) {
      cuts[static_cast<std::size_t>(depth)] = c;
      rec(depth + 1, c + 1);
    }
  };
  rec(0, 1);
  return best_means;
}

// Direct 2-D convolution of one frame, zero padding 1, stride 1.
double conv_frame_at(const TensorD& x, std::int64_t f, const TensorD& k, const TensorD& b, std::int64_t o,
                     std::int64_t i, std::int64_t j) {
  double acc = b.vec()[o];
  for (std::int64_t c = 0; c < x.dim(1); ++c)
    for (int u = 0; u < 3; ++u)
      for (int v = 0; v < 3; ++v) {
        const auto yy = i - 1 + u, xx = j - 1 + v;
        if (yy < 0 || yy >= x.dim(2) || xx < 0 || xx >= x.dim(3)) continue;
        acc += x.at({f, c, yy, xx}) * k.at({o, c, 0, u, v});
      }
  return acc;
}

}  // namespace

TEST_CASE("attention over a single key returns that value") {
  Rng rng(1, 0);
  auto q = TensorF::randn({4, 3}, rng);
  auto k = TensorF::randn({1, 3}, rng);
  TensorF v({1, 2}, {0.25f, -7.0f});
  auto out = scaled_dot_product_attention(q, k, v);
  for (int i = 0; i < 4; ++i) {
    CHECK(out.at({i, 0}) == doctest::Approx(0.25));
    CHECK(out.at({i, 1}) == doctest::Approx(-7.0));
  }
}

TEST_CASE("attention with identity inputs matches hand softmax") {
  TensorF eye({2, 2}, {1, 0, 0, 1});
  auto out = scaled_dot_product_attention(eye, eye, eye);
  // softmax([1/sqrt(2), 0]) evaluated by hand.
  CHECK(out.at({0, 0}) == doctest::Approx(0.6697615493).epsilon(1e-6));
  CHECK(out.at({0, 1}) == doctest::Approx(0.3302384507).epsilon(1e-6));
  CHECK(out.at({1, 0}) == doctest::Approx(0.3302384507).epsilon(1e-6));
}

TEST_CASE("attention over identical values returns that value") {
  Rng rng(2, 0);
  auto q = TensorF::randn({3, 2}, rng);
  auto k = TensorF::randn({2, 2}, rng);
  TensorF v({2, 2}, {3, 3, 3, 3});
  auto out = scaled_dot_product_attention(q, k, v);
  for (float x : out.data()) CHECK(x == doctest::Approx(3.0f));
}

TEST_CASE("attention rejects mismatched shapes") {
  CHECK_THROWS_AS(scaled_dot_product_attention(TensorF::zeros({2, 3}), TensorF::zeros({2, 4}), TensorF::zeros({2, 4})),
                  DimensionError);
  CHECK_THROWS_AS(scaled_dot_product_attention(TensorF::zeros({2, 3}), TensorF::zeros({2, 3}), TensorF::zeros({3, 4})),
                  DimensionError);
}

TEST_CASE("attention weights are convex: outputs stay inside the value hull") {
  Rng rng(9, 1);
  for (int trial = 0; trial < 20; ++trial) {
    auto q = TensorF::randn({5, 4}, rng, 3.0f);
    auto k = TensorF::randn({6, 4}, rng, 3.0f);
    auto v = TensorF::randn({6, 1}, rng);
    auto out = scaled_dot_product_attention(q, k, v);
    const float lo = *std::min_element(v.data().begin(), v.data().end());
    const float hi = *std::max_element(v.data().begin(), v.data().end());
    for (float x : out.data()) {
      CHECK(x >= lo - 1e-5f);
      CHECK(x <= hi + 1e-5f);
    }
    // Each softmax row sums to one: attention against all-ones values.
    auto ones = scaled_dot_product_attention(q, k, TensorF::full({6, 1}, 1.0f));
    for (float x : ones.data()) CHECK(std::abs(x - 1.0f) < 1e-6f);
  }
}

TEST_CASE("pseudo-3d convolution with a centred delta kernel is the identity") {
  Rng rng(4, 0);
  auto x = TensorF::randn({3, 2, 5, 5}, rng);
  auto k = TensorF::zeros({2, 2, 1, 3, 3});
  for (int c = 0; c < 2; ++c) k.data()[((c * 2 + c) * 9) + 4] = 1.0f;
  auto y = conv_pseudo3d(x, k, TensorF::zeros({2}));
  CHECK(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.vec().size(); ++i) CHECK(y.vec()[i] == x.vec()[i]);
}

TEST_CASE("pseudo-3d convolution equals frame-wise 2-d convolution") {
  Rng rng(7, 0);
  for (std::int64_t frames : {1, 2}) {
    auto x = TensorD::randn({frames, 2, 8, 8}, rng);
    auto k = TensorD::randn({3, 2, 1, 3, 3}, rng);
    auto b = TensorD::randn({3}, rng);
    auto y = conv_pseudo3d(x, k, b);
    double worst = 0;
    for (std::int64_t f = 0; f < frames; ++f)
      for (std::int64_t o = 0; o < 3; ++o)
        for (std::int64_t i = 0; i < 8; ++i)
          for (std::int64_t j = 0; j < 8; ++j)
            worst = std::max(worst, std::abs(y.at({f, o, i, j}) - conv_frame_at(x, f, k, b, o, i, j)));
    CHECK(worst < 1e-6);
  }
  CHECK_THROWS_AS(conv_pseudo3d(TensorF::zeros({2, 3, 4, 4}), TensorF::zeros({1, 2, 1, 3, 3}), TensorF::zeros({1})),
                  DimensionError);
}

TEST_CASE("grad_check on a quadratic is exact") {
  TensorD x({3}, {1, 2, 3});
  const double err = grad_check([](const TensorD& v) { return sum(mul(v, v)); }, x, 1e-4);
  CHECK(err < 1e-6);
  CHECK_THROWS_AS(grad_check([](const TensorD& v) { return sum(v); }, x, 1e-2), InputError);
}

TEST_CASE("grad_check on attention") {
  Rng rng(12, 0);
  auto q = TensorD::randn({3, 4}, rng);
  auto k = TensorD::randn({3, 4}, rng);
  auto v = TensorD::randn({3, 4}, rng);
  CHECK(grad_check([&](const TensorD& x) { return sum(scaled_dot_product_attention(x, k, v)); }, q) < 1e-3);
  CHECK(grad_check([&](const TensorD& x) { return sum(scaled_dot_product_attention(q, x, v)); }, k) < 1e-3);
  CHECK(grad_check([&](const TensorD& x) { return sum(scaled_dot_product_attention(q, k, x)); }, v) < 1e-3);
}

TEST_CASE("grad_check across trainable primitives") {
  Rng rng(21, 0);
  // Random non-uniform weighting so the checked scalar is not symmetric.
  auto weighted = [&](const TensorD& y) {
    Rng wr(99, static_cast<std::uint64_t>(y.numel()));
    auto w = TensorD::randn(y.shape(), wr);
    return sum(mul(y, w));
  };
  nn::Linear<double> lin(5, 3, rng);
  auto xl = TensorD::randn({2, 5}, rng);
  CHECK(grad_check([&](const TensorD& x) { return weighted(lin.forward(x)); }, xl) < 1e-3);
  CHECK(grad_check([&](const TensorD& w) { return weighted(linear(xl, w, lin.bias)); }, lin.weight) < 1e-3);

  nn::Conv2d<double> conv(2, 3, 3, 2, 1, rng);
  auto xc = TensorD::randn({2, 2, 5, 5}, rng);
  CHECK(grad_check([&](const TensorD& x) { return weighted(conv.forward(x)); }, xc) < 1e-3);
  CHECK(grad_check([&](const TensorD& w) { return weighted(conv2d(xc, w, conv.bias, 2, 1)); }, conv.weight) < 1e-3);

  nn::Conv3d<double> c3(2, 2, {3, 3, 3}, Conv3dParams{{1, 2, 2}, {1, 1, 1}}, rng);
  auto x3 = TensorD::randn({1, 2, 3, 4, 4}, rng);
  CHECK(grad_check([&](const TensorD& x) { return weighted(c3.forward(x)); }, x3) < 1e-3);
  CHECK(grad_check([&](const TensorD& w) { return weighted(conv3d(x3, w, c3.bias, c3.params)); }, c3.weight) < 1e-3);

  nn::GroupNorm<double> gn(2, 4);
  gn.gamma = TensorD::randn({4}, rng);
  auto xg = TensorD::randn({2, 4, 3, 3}, rng);
  CHECK(grad_check([&](const TensorD& x) { return weighted(gn.forward(x)); }, xg) < 1e-3);
  CHECK(grad_check([&](const TensorD& g) { return weighted(group_norm(xg, 2, g, gn.beta)); }, gn.gamma) < 1e-3);

  nn::LayerNorm<double> ln(6);
  auto xn = TensorD::randn({3, 6}, rng);
  CHECK(grad_check([&](const TensorD& x) { return weighted(ln.forward(x)); }, xn) < 1e-3);

  nn::Embedding<double> emb(5, 4, rng);
  std::vector<std::int64_t> ids{3, 1, 3};
  CHECK(grad_check([&](const TensorD& table) { return weighted(index_select(table, 0, std::span<const std::int64_t>(ids))); },
                   emb.table) < 1e-3);

  auto xs = TensorD::randn({2, 3, 4}, rng);
  CHECK(grad_check([&](const TensorD& x) { return weighted(silu(x)); }, xs) < 1e-3);
  CHECK(grad_check([&](const TensorD& x) { return weighted(sigmoid(x)); }, xs) < 1e-3);
  CHECK(grad_check([&](const TensorD& x) { return weighted(log_softmax(x)); }, xs) < 1e-3);
  CHECK(grad_check([&](const TensorD& x) { return weighted(upsample_nearest(x, 2)); }, xs) < 1e-3);
  CHECK(grad_check([&](const TensorD& x) { return weighted(permute(x, {2, 0, 1})); }, xs) < 1e-3);
  CHECK(grad_check([&](const TensorD& x) { return weighted(mean_trailing(x, 1)); }, xs) < 1e-3);
  std::vector<int> labels{0, 3};
  auto logits = TensorD::randn({2, 4}, rng);
  CHECK(grad_check([&](const TensorD& x) { return cross_entropy(x, std::span<const int>(labels)); }, logits) < 1e-3);
}

TEST_CASE("warmup-cosine schedule endpoints") {
  AdamWConfig cfg;
  cfg.total_steps = 2000;
  CHECK(warmup_cosine_lr(cfg.warmup, cfg) == doctest::Approx(1e-4));
  CHECK(warmup_cosine_lr(cfg.total_steps, cfg) == doctest::Approx(0.0));
  CHECK(warmup_cosine_lr(1, cfg) == doctest::Approx(1e-4 / 500));
  CHECK(warmup_cosine_lr(1250, cfg) == doctest::Approx(0.5e-4));
  CHECK_THROWS_AS(warmup_cosine_lr(0, cfg), InputError);
}

TEST_CASE("adamw with zero gradients and no decay leaves parameters unchanged") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.total_steps = 1000;
  std::vector<std::vector<float>> params{{1.0f, -2.0f}, {3.0f}};
  const auto before = params;
  std::vector<std::vector<float>> grads{{0.0f, 0.0f}, {0.0f}};
  std::vector<std::vector<float>> m{{0, 0}, {0}}, v{{0, 0}, {0}};
  for (int s = 1; s <= 10; ++s) adamw_cosine_step(params, grads, m, v, s, cfg);
  CHECK(params == before);
}

TEST_CASE("adamw moves against the gradient and decays weights") {
  AdamWConfig cfg;
  cfg.warmup = 0;
  cfg.total_steps = 100;
  cfg.lr = 0.1;
  TensorF p({2}, {1.0f, 1.0f}, true);
  AdamW opt({p}, cfg);
  p.grad()[0] = 1.0f;
  p.grad()[1] = -1.0f;
  const double lr = opt.step(1);
  CHECK(lr == doctest::Approx(warmup_cosine_lr(1, cfg)));
  // First Adam step has magnitude lr; decay multiplies by (1 - lr*wd).
  CHECK(p.vec()[0] == doctest::Approx(1.0 * (1 - lr * 0.01) - lr).epsilon(1e-6));
  CHECK(p.vec()[1] == doctest::Approx(1.0 * (1 - lr * 0.01) + lr).epsilon(1e-6));
}

TEST_CASE("kmeans_1d recovers well separated pairs") {
  std::vector<double> values{1, 2, 10, 11, 20, 21, 30, 31};
  auto r = kmeans_1d(values, 4);
  const auto oracle = best_contiguous_partition(values, 4);
  REQUIRE(r.centroids.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(r.centroids[static_cast<std::size_t>(i)] == doctest::Approx(oracle[static_cast<std::size_t>(i)]));
  }
  CHECK(r.centroids == std::vector<double>{1.5, 10.5, 20.5, 30.5});
  CHECK(r.assignments == std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3});
}

TEST_CASE("kmeans_1d degenerate cases") {
  std::vector<double> same{4, 4, 4};
  auto one = kmeans_1d(same, 1);
  CHECK(one.centroids == std::vector<double>{4});
  std::vector<double> v{5, 1, 3};
  auto each = kmeans_1d(v, 3);
  CHECK(each.centroids == std::vector<double>{1, 3, 5});
  CHECK(each.assignments == std::vector<int>{2, 0, 1});
  CHECK_THROWS_AS(kmeans_1d(v, 4), InputError);
  CHECK_THROWS_AS(kmeans_1d(v, 0), InputError);
}

TEST_CASE("kmeans_1d is permutation invariant and every value sits at its nearest centroid") {
  Rng rng(31, 0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> v(static_cast<std::size_t>(rng.integer(4, 40)));
    for (auto& x : v) x = rng.uniform(0, 100);
    auto a = kmeans_1d(v, 4);
    auto shuffled = v;
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
    auto b = kmeans_1d(shuffled, 4);
    CHECK(a.centroids == b.centroids);
    CHECK(std::is_sorted(a.centroids.begin(), a.centroids.end()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double d = std::abs(v[i] - a.centroids[static_cast<std::size_t>(a.assignments[i])]);
      for (int c = 0; c < 4; ++c) {
        const double dc = std::abs(v[i] - a.centroids[static_cast<std::size_t>(c)]);
        CHECK(d <= dc);
        if (c < a.assignments[i]) CHECK(dc > d);
      }
    }
  }
}

TEST_CASE("cosine similarity basics") {
  std::vector<float> a{1, 0}, b{0, 1}, c{1, 2}, d{2, 4};
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));
  CHECK(cosine_similarity(c, d) == doctest::Approx(1.0));
  std::vector<float> z{0, 0};
  CHECK_THROWS_AS(cosine_similarity(a, z), NumericError);
  Rng rng(8, 0);
  for (int i = 0; i < 20; ++i) {
    auto x = TensorF::randn({7}, rng), y = TensorF::randn({7}, rng);
    const double s = cosine_similarity(x, y);
    CHECK(s == doctest::Approx(cosine_similarity(y, x)).epsilon(1e-12));
    CHECK(s == doctest::Approx(cosine_similarity(scale(x, 3.5f), y)).epsilon(1e-6));
  }
}

TEST_CASE("rng streams are reproducible and distinct") {
  Rng a(42, 1), b(42, 1), c(42, 2);
  std::vector<double> va, vb, vc;
  for (int i = 0; i < 16; ++i) {
    va.push_back(a.normal());
    vb.push_back(b.normal());
    vc.push_back(c.normal());
  }
  CHECK(va == vb);
  CHECK(va != vc);
}
