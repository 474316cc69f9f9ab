#pragma once

// One entry per differentiable op kind: an input generator and the op call.
// The FD sweep in the tensor tests and the acceptance run share this table.

#include <functional>
#include <string>
#include <vector>

#include "support/gradcheck.hpp"

namespace cotmisr::testing {

// Random rank-3..5 shape with small extents.
inline Shape random_shape(Rng& rng, std::size_t min_rank = 3, std::size_t max_rank = 5) {
  const auto rank = static_cast<std::size_t>(rng.range(static_cast<std::int64_t>(min_rank),
                                                       static_cast<std::int64_t>(max_rank)));
  Shape s(rank);
  for (auto& d : s) d = static_cast<std::size_t>(rng.range(1, 3));
  return s;
}

struct OpCase {
  std::string name;
  std::function<std::vector<TensorD>(Rng&)> make_inputs;
  std::function<TensorD(const std::vector<TensorD>&)> apply;
};

inline std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  auto unary = [&](std::string name, auto fn, bool away_from_zero = false) {
    cases.push_back({name,
                     [away_from_zero](Rng& rng) {
                       const Shape s = random_shape(rng);
                       return std::vector<TensorD>{away_from_zero ? random_away_from_zero(s, rng)
                                                                  : random_tensor(s, rng)};
                     },
                     [fn](const std::vector<TensorD>& in) { return fn(in[0]); }});
  };
  auto binary = [&](std::string name, auto fn, double lo = -1.0) {
    cases.push_back({name,
                     [lo](Rng& rng) {
                       Shape s = random_shape(rng);
                       // Second operand broadcasts along the leading and last axes.
                       Shape t = s;
                       t.front() = 1;
                       t.back() = 1;
                       return std::vector<TensorD>{random_tensor(s, rng), random_tensor(t, rng, lo, 1.0)};
                     },
                     [fn](const std::vector<TensorD>& in) { return fn(in[0], in[1]); }});
  };

  binary("add", [](const TensorD& a, const TensorD& b) { return add(a, b); });
  binary("sub", [](const TensorD& a, const TensorD& b) { return sub(a, b); });
  binary("mul", [](const TensorD& a, const TensorD& b) { return mul(a, b); });
  binary("div", [](const TensorD& a, const TensorD& b) { return div(a, b); }, 0.5);
  unary("broadcast_to", [](const TensorD& x) {
    Shape s = x.shape();
    s.insert(s.begin(), 2);
    return broadcast_to(x, s);
  });
  unary("neg", [](const TensorD& x) { return neg(x); });
  unary("scale", [](const TensorD& x) { return scale(x, 1.7); });
  unary("add_scalar", [](const TensorD& x) { return add_scalar(x, -0.3); });
  unary("relu", [](const TensorD& x) { return relu(x); }, true);
  unary("sigmoid", [](const TensorD& x) { return sigmoid(x); });
  unary("abs", [](const TensorD& x) { return cotmisr::abs(x); }, true);
  unary("square", [](const TensorD& x) { return square(x); });
  unary("sum", [](const TensorD& x) { return sum(x); });
  unary("mean", [](const TensorD& x) { return mean(x); });
  unary("sum_axis", [](const TensorD& x) { return sum(x, 1, true); });
  unary("median", [](const TensorD& x) { return median(x, 0); });
  unary("softmax", [](const TensorD& x) { return softmax(x, 1); });
  unary("softmax_last", [](const TensorD& x) { return softmax(x, x.rank() - 1); });
  unary("reshape", [](const TensorD& x) { return reshape(x, Shape{x.numel()}); });
  unary("permute", [](const TensorD& x) {
    std::vector<std::size_t> order(x.rank());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = order.size() - 1 - i;
    return permute(x, order);
  });
  unary("transpose", [](const TensorD& x) { return transpose(x, 0, 2); });
  unary("slice", [](const TensorD& x) { return slice(x, 1, 0, 1); });
  unary("dropout", [](const TensorD& x) {
    Rng r(99);
    return dropout(x, 0.3, r);
  });

  cases.push_back({"median_even",
                   [](Rng& rng) { return std::vector<TensorD>{random_tensor({1, 4, 3, 2}, rng)}; },
                   [](const std::vector<TensorD>& in) { return median(in[0], 1); }});
  cases.push_back({"concat",
                   [](Rng& rng) {
                     return std::vector<TensorD>{random_tensor({2, 3, 2}, rng), random_tensor({2, 1, 2}, rng)};
                   },
                   [](const std::vector<TensorD>& in) { return concat(in, 1); }});
  cases.push_back({"matmul",
                   [](Rng& rng) {
                     return std::vector<TensorD>{random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)};
                   },
                   [](const std::vector<TensorD>& in) { return matmul(in[0], in[1]); }});
  cases.push_back({"matmul_batched",
                   [](Rng& rng) {
                     return std::vector<TensorD>{random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 2}, rng)};
                   },
                   [](const std::vector<TensorD>& in) { return matmul(in[0], in[1]); }});
  cases.push_back({"linear",
                   [](Rng& rng) {
                     return std::vector<TensorD>{random_tensor({2, 3, 4}, rng), random_tensor({5, 4}, rng),
                                                 random_tensor({5}, rng)};
                   },
                   [](const std::vector<TensorD>& in) { return linear(in[0], in[1], in[2]); }});
  cases.push_back({"attention",
                   [](Rng& rng) {
                     return std::vector<TensorD>{random_tensor({2, 5, 3}, rng), random_tensor({2, 5, 3}, rng),
                                                 random_tensor({2, 5, 3}, rng)};
                   },
                   [](const std::vector<TensorD>& in) {
                     return scaled_dot_product_attention(in[0], in[1], in[2], 0.6);
                   }});
  cases.push_back({"layer_norm",
                   [](Rng& rng) {
                     return std::vector<TensorD>{random_tensor({2, 3, 6}, rng), random_tensor({6}, rng, 0.5, 1.5),
                                                 random_tensor({6}, rng)};
                   },
                   [](const std::vector<TensorD>& in) { return layer_norm(in[0], in[1], in[2], 1e-5); }});
  cases.push_back({"global_avg_pool2d",
                   [](Rng& rng) { return std::vector<TensorD>{random_tensor({2, 3, 4, 3}, rng)}; },
                   [](const std::vector<TensorD>& in) { return global_avg_pool2d(in[0]); }});
  cases.push_back({"conv2d",
                   [](Rng& rng) {
                     return std::vector<TensorD>{random_tensor({2, 3, 5, 4}, rng), random_tensor({4, 3, 3, 3}, rng),
                                                 random_tensor({4}, rng)};
                   },
                   [](const std::vector<TensorD>& in) { return conv2d(in[0], in[1], in[2], 1, 1); }});
  cases.push_back({"conv2d_strided",
                   [](Rng& rng) {
                     return std::vector<TensorD>{random_tensor({1, 2, 6, 5}, rng), random_tensor({3, 2, 3, 3}, rng),
                                                 random_tensor({3}, rng)};
                   },
                   [](const std::vector<TensorD>& in) { return conv2d(in[0], in[1], in[2], 2, 0); }});
  cases.push_back({"conv2d_pointwise",
                   [](Rng& rng) {
                     return std::vector<TensorD>{random_tensor({2, 3, 3, 3}, rng), random_tensor({2, 3, 1, 1}, rng),
                                                 random_tensor({2}, rng)};
                   },
                   [](const std::vector<TensorD>& in) { return conv2d(in[0], in[1], in[2]); }});
  cases.push_back({"depthwise_conv2d",
                   [](Rng& rng) {
                     return std::vector<TensorD>{random_tensor({2, 3, 4, 5}, rng), random_tensor({3, 1, 3, 3}, rng),
                                                 random_tensor({3}, rng)};
                   },
                   [](const std::vector<TensorD>& in) { return depthwise_conv2d(in[0], in[1], in[2], 1, 1); }});
  cases.push_back({"pixel_shuffle",
                   [](Rng& rng) { return std::vector<TensorD>{random_tensor({2, 8, 2, 3}, rng)}; },
                   [](const std::vector<TensorD>& in) { return pixel_shuffle(in[0], 2); }});
  cases.push_back({"pixel_unshuffle",
                   [](Rng& rng) { return std::vector<TensorD>{random_tensor({1, 2, 6, 3}, rng)}; },
                   [](const std::vector<TensorD>& in) { return pixel_unshuffle(in[0], 3); }});
  // 2x3 input so that edge clamping folds several taps onto one pixel
  cases.push_back({"upsample_bicubic",
                   [](Rng& rng) { return std::vector<TensorD>{random_tensor({2, 1, 2, 3}, rng)}; },
                   [](const std::vector<TensorD>& in) { return upsample_bicubic(in[0], 3); }});
  return cases;
}

}  // namespace cotmisr::testing
