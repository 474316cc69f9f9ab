#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>

#include "cotmisr/errors.hpp"
#include "cotmisr/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"

using namespace cotmisr;
using cotmisr::testing::grad_check;
using cotmisr::testing::random_away_from_zero;
using cotmisr::testing::random_tensor;
using cotmisr::testing::TensorD;
using cotmisr::testing::weighted_sum;

namespace {

constexpr double kOpTolerance = 1e-6;
constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

using cotmisr::testing::op_cases;

}  // namespace

TEST_CASE("every op-kind matches central differences in f64 across five seeds") {
  for (const auto& op : op_cases()) {
    for (auto seed : kSeeds) {
      CAPTURE(op.name);
      CAPTURE(seed);
      Rng rng(seed * 7919);
      auto inputs = op.make_inputs(rng);
      auto apply = op.apply;
      const auto res = grad_check([&](const std::vector<TensorD>& in) { return weighted_sum(apply(in), seed); },
                                  inputs);
      CAPTURE(res.where);
      CHECK(res.max_rel_error < kOpTolerance);
    }
  }
}

TEST_CASE("conv2d examples") {
  SUBCASE("identity 1x1 kernel") {
    TensorD x({1, 1, 1, 1}, 1.0), w({1, 1, 1, 1}, 1.0), b({1}, 0.0);
    CHECK(conv2d(x, w, b).item() == 1.0);
  }
  SUBCASE("all-ones 3x3 with pad 1") {
    TensorD x({1, 1, 3, 3}, 1.0), w({1, 1, 3, 3}, 1.0), b({1}, 0.0);
    const auto y = conv2d(x, w, b, 1, 1);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    CHECK(y.at({0, 0, 1, 1}) == 9.0);
    CHECK(y.at({0, 0, 0, 0}) == 4.0);
    CHECK(y.at({0, 0, 2, 2}) == 4.0);
    CHECK(y.at({0, 0, 0, 1}) == 6.0);
  }
  SUBCASE("zero weight gives the bias everywhere") {
    Rng rng(3);
    TensorD x = random_tensor({2, 3, 4, 4}, rng), w({2, 3, 3, 3}, 0.0), b({2}, 0.75);
    const auto y = conv2d(x, w, b, 1, 1);
    for (double v : y.data()) CHECK(v == 0.75);
  }
  SUBCASE("output extent law") {
    TensorD x({1, 1, 7, 6}, 1.0), w({1, 1, 3, 3}, 1.0);
    CHECK(conv2d(x, w, TensorD(), 2, 1).shape() == Shape{1, 1, 4, 3});
  }
  SUBCASE("channel mismatch is a descriptive error") {
    TensorD x({1, 2, 4, 4}, 1.0), w({1, 3, 3, 3}, 1.0);
    CHECK_THROWS_AS(conv2d(x, w, TensorD(), 1, 1), ShapeError);
    CHECK_THROWS_WITH_AS(conv2d(x, w, TensorD(), 1, 1),
                         doctest::Contains("input channels"), ShapeError);
  }
}

TEST_CASE("depthwise_conv2d examples") {
  Rng rng(11);
  SUBCASE("channels are independent") {
    TensorD x = random_tensor({1, 2, 4, 4}, rng);
    TensorD w({2, 1, 3, 3}, 0.0);
    w.mutable_data()[9 + 4] = 1.0;  // channel 1: centre tap
    const auto y = depthwise_conv2d(x, w, TensorD(), 1, 1);
    for (std::size_t i = 0; i < 16; ++i) {
      CHECK(y.data()[i] == 0.0);
      CHECK(y.data()[16 + i] == x.data()[16 + i]);
    }
  }
  SUBCASE("separable parameter count against dense") {
    const std::size_t c = 64, k = 3;
    const std::size_t separable = c * k * k + c + c * c + c;
    const std::size_t dense = c * c * k * k + c;
    CHECK(static_cast<double>(c * k * k + c * c) / static_cast<double>(c * c * k * k) < 1.0 / 7.0);
    CHECK(separable < dense);
  }
  SUBCASE("equals conv2d with a block-diagonal kernel") {
    TensorD x = random_tensor({2, 2, 5, 5}, rng);
    TensorD w = random_tensor({2, 1, 3, 3}, rng);
    TensorD b = random_tensor({2}, rng);
    TensorD dense({2, 2, 3, 3}, 0.0);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t t = 0; t < 9; ++t) dense.mutable_data()[(c * 2 + c) * 9 + t] = w.data()[c * 9 + t];
    const auto a = depthwise_conv2d(x, w, b, 1, 1);
    const auto d = conv2d(x, dense, b, 1, 1);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a.data()[i] - d.data()[i]));
    CHECK(worst < 1e-12);
  }
  SUBCASE("channel mismatch") {
    TensorD x({1, 3, 4, 4}, 1.0), w({2, 1, 3, 3}, 1.0);
    CHECK_THROWS_AS(depthwise_conv2d(x, w, TensorD(), 1, 1), ShapeError);
  }
}

TEST_CASE("small-op examples") {
  SUBCASE("softmax of equal logits") {
    const auto y = softmax(TensorD({2}, std::vector<double>{0.0, 0.0}), 0);
    CHECK(y.data()[0] == 0.5);
    CHECK(y.data()[1] == 0.5);
  }
  SUBCASE("softmax rows sum to one") {
    Rng rng(5);
    const auto y = softmax(random_tensor({4, 7}, rng, -5.0, 5.0), 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) s += y.data()[r * 7 + c];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
  SUBCASE("layer_norm of a constant vector") {
    const auto y = layer_norm(TensorD({1, 5}, 3.0), TensorD(), TensorD(), 1e-5);
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("global average pool") {
    const auto y = global_avg_pool2d(TensorD({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 2.5);
  }
  SUBCASE("median odd and even") {
    CHECK(median(TensorD({3}, std::vector<double>{5, 1, 3}), 0).item() == 3.0);
    CHECK(median(TensorD({4}, std::vector<double>{4, 1, 3, 2}), 0).item() == 2.5);
  }
}

TEST_CASE("pixel_shuffle layout and bijection") {
  std::vector<double> v(9);
  for (std::size_t i = 0; i < 9; ++i) v[i] = static_cast<double>(i);
  const auto y = pixel_shuffle(TensorD({1, 9, 1, 1}, v), 3);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) CHECK(y.data()[i] == static_cast<double>(i));

  for (auto seed : kSeeds) {
    Rng rng(seed);
    const TensorD x = random_tensor({2, 18, 3, 4}, rng, -1, 1, false);
    const auto s = pixel_shuffle(x, 3);
    const auto back = pixel_unshuffle(s, 3);
    CHECK(std::equal(back.data().begin(), back.data().end(), x.data().begin()));
    std::vector<double> a(x.data().begin(), x.data().end()), b(s.data().begin(), s.data().end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
  CHECK_THROWS_AS(pixel_shuffle(TensorD({1, 8, 2, 2}, 0.0), 3), ShapeError);
}

TEST_CASE("concat then split along the same axis is the identity") {
  for (auto seed : kSeeds) {
    Rng rng(seed + 100);
    const TensorD a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 5, 4}, rng);
    const auto parts = split(concat(std::vector<TensorD>{a, b}, 1), 1, {3, 5});
    CHECK(std::equal(parts[0].data().begin(), parts[0].data().end(), a.data().begin()));
    CHECK(std::equal(parts[1].data().begin(), parts[1].data().end(), b.data().begin()));
  }
}

TEST_CASE("backward examples and contract") {
  SUBCASE("d sum(x) = ones") {
    Rng rng(1);
    TensorD x = random_tensor({3, 2}, rng);
    sum(x).backward();
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("d sum(x^2) at [1,2] = [2,4]") {
    TensorD x({2}, std::vector<double>{1.0, 2.0}, true);
    sum(square(x)).backward();
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
  }
  SUBCASE("reuse of a tensor accumulates both paths") {
    TensorD x({1}, std::vector<double>{3.0}, true);
    sum(add(mul(x, x), x)).backward();
    CHECK(x.grad()[0] == 7.0);
  }
  SUBCASE("every reachable leaf receives a grad buffer") {
    TensorD a({2}, 1.0, true), b({2}, 2.0, true);
    sum(mul(a, b)).backward();
    CHECK(a.has_grad());
    CHECK(b.has_grad());
  }
  SUBCASE("non-scalar loss is rejected") {
    TensorD x({2}, 1.0, true);
    CHECK_THROWS_AS(scale(x, 2.0).backward(), ShapeError);
  }
  SUBCASE("detached loss is rejected") {
    TensorD x({2}, 1.0, false);
    CHECK_THROWS_AS(sum(x).backward(), std::logic_error);
  }
  SUBCASE("no-grad mode records nothing") {
    TensorD x({2}, 1.0, true);
    NoGradGuard guard;
    CHECK_FALSE(sum(x).requires_grad());
  }
}

TEST_CASE("identical seed and inputs give bit-identical outputs and grads") {
  auto run = [] {
    Rng rng(42);
    TensorD x = random_tensor({2, 3, 6, 6}, rng);
    TensorD w = random_tensor({4, 3, 3, 3}, rng);
    TensorD b = random_tensor({4}, rng);
    auto y = sigmoid(conv2d(x, w, b, 1, 1));
    auto q = reshape(permute(reshape(y, {2, 4, 36}), {0, 2, 1}), {2, 36, 4});
    auto out = scaled_dot_product_attention(q, q, q, 0.5);
    auto loss = weighted_sum(out, 7);
    loss.backward();
    std::vector<double> bits(out.data().begin(), out.data().end());
    bits.insert(bits.end(), x.grad().begin(), x.grad().end());
    bits.insert(bits.end(), w.grad().begin(), w.grad().end());
    return bits;
  };
  CHECK(run() == run());
}

TEST_CASE("shape errors") {
  CHECK_THROWS_AS(TensorD({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(reshape(TensorD({2, 3}, 0.0), {4}), ShapeError);
  CHECK_THROWS_AS(add(TensorD({2, 3}, 0.0), TensorD({4}, 0.0)), ShapeError);
  CHECK_THROWS_AS(matmul(TensorD({2, 3}, 0.0), TensorD({2, 3}, 0.0)), ShapeError);
  CHECK_THROWS_AS(median(TensorD({0, 2}, 0.0), 0), ShapeError);
}
