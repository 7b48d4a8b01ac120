#include <cmath>
#include <sstream>

#include "doctest.h"
#include "seqaug/core/error.hpp"
#include "seqaug/core/ops.hpp"
#include "seqaug/core/tensor_io.hpp"

using namespace seqaug;

TEST_CASE("tensor construction validates element count") {
  CHECK_THROWS_AS(TensorF({2, 3}, std::vector<float>(5)), DimensionError);
  auto t = TensorF::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
}

TEST_CASE("broadcast add and its gradient reduce over broadcast axes") {
  TensorD a({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  TensorD b({1, 3}, {10, 20, 30}, true);
  auto c = add(a, b);
  CHECK(c.vec() == std::vector<double>{11, 22, 33, 14, 25, 36});
  sum(c).backward();
  CHECK(std::vector<double>(b.grad().begin(), b.grad().end()) == std::vector<double>{2, 2, 2});
  CHECK(std::vector<double>(a.grad().begin(), a.grad().end()) == std::vector<double>(6, 1.0));
}

TEST_CASE("permute reorders axes") {
  TensorF x({2, 3}, {0, 1, 2, 3, 4, 5});
  auto y = permute(x, {1, 0});
  CHECK(y.shape() == Shape{3, 2});
  CHECK(y.vec() == std::vector<float>{0, 3, 1, 4, 2, 5});
  CHECK_THROWS_AS(permute(x, {0, 0}), DimensionError);
}

TEST_CASE("concat and slice are inverse") {
  TensorF a({2, 2}, {1, 2, 3, 4});
  TensorF b({2, 1}, {9, 8});
  auto c = concat<float>({a, b}, 1);
  CHECK(c.vec() == std::vector<float>{1, 2, 9, 3, 4, 8});
  CHECK(slice(c, 1, 0, 2).vec() == a.vec());
  CHECK(slice(c, 1, 2, 1).vec() == b.vec());
}

TEST_CASE("index_select scatter-adds repeated indices in backward") {
  TensorD x({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  std::vector<std::int64_t> idx{2, 0, 2};
  auto y = index_select(x, 0, std::span<const std::int64_t>(idx));
  CHECK(y.vec() == std::vector<double>{5, 6, 1, 2, 5, 6});
  sum(y).backward();
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 1, 0, 0, 2, 2});
}

TEST_CASE("conv2d matches a direct loop") {
  Rng rng(3, 0);
  auto x = TensorD::randn({2, 3, 5, 6}, rng);
  auto w = TensorD::randn({4, 3, 3, 3}, rng);
  auto b = TensorD::randn({4}, rng);
  for (std::int64_t stride : {1, 2}) {
    auto y = conv2d(x, w, b, stride, 1);
    const std::int64_t oh = (5 + 2 - 3) / stride + 1, ow = (6 + 2 - 3) / stride + 1;
    REQUIRE(y.shape() == Shape{2, 4, oh, ow});
    double worst = 0;
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t o = 0; o < 4; ++o)
        for (std::int64_t i = 0; i < oh; ++i)
          for (std::int64_t j = 0; j < ow; ++j) {
            double acc = b.vec()[o];
            for (std::int64_t c = 0; c < 3; ++c)
              for (std::int64_t u = 0; u < 3; ++u)
                for (std::int64_t v = 0; v < 3; ++v) {
                  const std::int64_t yy = i * stride - 1 + u, xx = j * stride - 1 + v;
                  if (yy < 0 || yy >= 5 || xx < 0 || xx >= 6) continue;
                  acc += x.at({n, c, yy, xx}) * w.at({o, c, u, v});
                }
            worst = std::max(worst, std::abs(acc - y.at({n, o, i, j})));
          }
    CHECK(worst < 1e-12);
  }
  CHECK_THROWS_AS(conv2d(x, TensorD::zeros({4, 2, 3, 3}), b, 1, 1), DimensionError);
}

TEST_CASE("softmax rows sum to one even for large logits") {
  TensorF x({2, 3}, {1000, 1001, 1002, -5, 0, 5});
  auto y = softmax(x);
  for (int r = 0; r < 2; ++r) {
    double s = 0;
    for (int c = 0; c < 3; ++c) s += y.vec()[r * 3 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK_FALSE(y.has_non_finite());
}

TEST_CASE("cross entropy of uniform logits is log(C)") {
  TensorD logits = TensorD::zeros({4, 3});
  std::vector<int> labels{0, 1, 2, 1};
  CHECK(cross_entropy(logits, std::span<const int>(labels)).item() == doctest::Approx(std::log(3.0)));
  std::vector<int> bad{0, 1, 3, 1};
  CHECK_THROWS_AS(cross_entropy(logits, std::span<const int>(bad)), InputError);
}

TEST_CASE("group norm output has zero mean and unit variance per group") {
  Rng rng(5, 0);
  auto x = TensorD::randn({2, 4, 3, 3}, rng, 3.0);
  auto y = group_norm(x, 2, TensorD::full({4}, 1.0), TensorD::zeros({4}));
  for (int n = 0; n < 2; ++n)
    for (int g = 0; g < 2; ++g) {
      double m = 0, v = 0;
      for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 9; ++i) m += y.vec()[((n * 4 + g * 2 + c) * 9) + i];
      m /= 18;
      for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 9; ++i) v += std::pow(y.vec()[((n * 4 + g * 2 + c) * 9) + i] - m, 2);
      v /= 18;
      CHECK(std::abs(m) < 1e-12);
      CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("no-grad mode records nothing") {
  TensorF p({2}, {1, 2}, true);
  NoGradGuard guard;
  auto y = scale(p, 2.0f);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("tensor record layout is bit-exact") {
  TensorF t({2, 1}, {1.0f, -2.5f});
  std::ostringstream os;
  write_tensor(os, t);
  const std::string bytes = os.str();
  REQUIRE(bytes.size() == 4 + 1 + 1 + 2 * 8 + 2 * 4);
  CHECK(bytes.substr(0, 4) == "CGA1");
  CHECK(static_cast<unsigned char>(bytes[4]) == 0x01);
  CHECK(static_cast<unsigned char>(bytes[5]) == 2);
  // Extent 2 as little-endian u64.
  CHECK(static_cast<unsigned char>(bytes[6]) == 2);
  for (int i = 7; i < 14; ++i) CHECK(bytes[static_cast<std::size_t>(i)] == 0);
  // 1.0f = 0x3F800000 little-endian.
  CHECK(static_cast<unsigned char>(bytes[22]) == 0x00);
  CHECK(static_cast<unsigned char>(bytes[25]) == 0x3F);
  std::istringstream is(bytes);
  auto back = read_tensor(is);
  CHECK(back.shape() == t.shape());
  CHECK(back.vec() == t.vec());

  std::istringstream bad("XXXX");
  CHECK_THROWS_AS(read_tensor(bad), DataError);
}

TEST_CASE("random tensors survive a write/read cycle") {
  Rng rng(11, 2);
  for (int trial = 0; trial < 5; ++trial) {
    Shape s;
    const auto rank = rng.integer(0, 4);
    for (int i = 0; i < rank; ++i) s.push_back(rng.integer(1, 4));
    auto t = TensorF::randn(s, rng);
    std::stringstream ss;
    write_tensor(ss, t);
    auto back = read_tensor(ss);
    CHECK(back.shape() == t.shape());
    CHECK(back.vec() == t.vec());
  }
}
