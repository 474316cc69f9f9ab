#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <sstream>

#include "cotmisr/errors.hpp"
#include "cotmisr/metrics.hpp"
#include "cotmisr/ops.hpp"
#include "support/metric_oracles.hpp"

using namespace cotmisr;

namespace {

using namespace cotmisr::testing;

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("identity pair scores the cap and cSSIM 1") {
  Rng rng(1);
  const Image hr = random_image(30, 30, rng);
  const Mask m(30, 30);
  const SceneScore s = cpsnr(hr, hr, m);
  CHECK(s.cpsnr == 100.0);
  CHECK(std::abs(s.cssim - 1.0) < 1e-9);
  CHECK(s.shift_u == 0);
  CHECK(s.shift_v == 0);
  CHECK(s.bias == 0.0);
}

TEST_CASE("constant offset is removed by the bias correction") {
  Rng rng(2);
  const Image hr = random_image(24, 24, rng);
  Image sr = hr;
  for (auto& v : sr.pixels) v += 0.1;
  const SceneScore s = cpsnr(sr, hr, Mask(24, 24));
  CHECK(s.cpsnr == 100.0);
  CHECK(std::abs(s.bias + 0.1) < 1e-12);
  CHECK(std::abs(s.cssim - 1.0) < 1e-9);
}

TEST_CASE("bias invariance is exact for every constant on dyadic data") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Image hr = dyadic_image(26, 28, rng);
    const Image sr = dyadic_image(26, 28, rng);
    const Mask m = random_mask(26, 28, rng, 0.8);
    const SceneScore base = cpsnr(sr, hr, m);
    for (double c : {0.5, -0.25, 0.0009765625, 3.0, -7.5}) {
      Image shifted = sr;
      for (auto& v : shifted.pixels) v += c;
      const SceneScore s = cpsnr(shifted, hr, m);
      CHECK(s.cpsnr == base.cpsnr);
      CHECK(s.cssim == base.cssim);
      CHECK(s.shift_u == base.shift_u);
      CHECK(s.shift_v == base.shift_v);
    }
  }
}

TEST_CASE("shifted copy is realigned by the search") {
  Rng rng(4);
  const Image hr = random_image(30, 30, rng);
  Image sr(30, 30, 0.5);
  for (std::size_t y = 1; y < 30; ++y)
    for (std::size_t x = 0; x + 2 < 30; ++x) sr.at(y, x) = hr.at(y - 1, x + 2);
  const SceneScore s = cpsnr(sr, hr, Mask(30, 30));
  CHECK(s.cpsnr == 100.0);
  CHECK(s.shift_u == 1);
  CHECK(s.shift_v == -2);
  MetricOptions fixed;
  fixed.max_shift = 0;
  CHECK(cpsnr(sr, hr, Mask(30, 30), fixed).cpsnr < 40.0);
}

TEST_CASE("shift search never scores below the aligned score") {
  Rng rng(5);
  MetricOptions fixed;
  fixed.max_shift = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Image hr = random_image(20, 22, rng);
    const Image sr = noisy_copy(hr, rng.uniform(0.01, 0.2), rng);
    const Mask m = random_mask(20, 22, rng, rng.uniform(0.6, 1.0));
    const SceneScore wide = cpsnr(sr, hr, m), narrow = cpsnr(sr, hr, m, fixed);
    CHECK(wide.cpsnr >= narrow.cpsnr);
    CHECK(wide.cssim >= narrow.cssim);
  }
}

TEST_CASE("cPSNR matches the direct formula") {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const Image hr = random_image(22, 24, rng);
    const Image sr = noisy_copy(hr, 0.05, rng);
    const Mask m = random_mask(22, 24, rng, 0.85);
    CHECK(std::abs(cpsnr(sr, hr, m).cpsnr - oracle_cpsnr(sr, hr, m, 3, 3, 100.0)) < 1e-9);
  }
}

TEST_CASE("masked SSIM matches the direct oracle on random 32x32 pairs") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const Image x = random_image(32, 32, rng);
    const Image y = noisy_copy(x, 0.1, rng);
    const Mask full(32, 32);
    CHECK(std::abs(masked_ssim(x, y, full) - oracle_ssim(x, y, full)) < 1e-9);
    const Mask partial = random_mask(32, 32, rng, 0.7);
    CHECK(std::abs(masked_ssim(x, y, partial) - oracle_ssim(x, y, partial)) < 1e-9);
    const Image z = random_image(32, 32, rng);  // unrelated pair
    CHECK(std::abs(masked_ssim(x, z, partial) - oracle_ssim(x, z, partial)) < 1e-9);
  }
}

TEST_CASE("cSSIM matches the oracle with shift and bias search") {
  Rng rng(8);
  for (int trial = 0; trial < 3; ++trial) {
    const Image hr = random_image(32, 32, rng);
    Image sr = noisy_copy(hr, 0.05, rng);
    for (auto& v : sr.pixels) v += 0.03;
    const Mask m = random_mask(32, 32, rng, 0.9);
    CHECK(std::abs(cssim(sr, hr, m) - oracle_cssim(sr, hr, m, 3, 3)) < 1e-9);
  }
}

TEST_CASE("SSIM examples") {
  Rng rng(9);
  const Image x = random_image(16, 16, rng);
  Image inv = x;
  for (auto& v : inv.pixels) v = 1.0 - v;
  CHECK(masked_ssim(x, inv, Mask(16, 16)) < 1.0);
  CHECK(masked_ssim(x, inv, Mask(16, 16)) < 0.0);
  CHECK(std::abs(masked_ssim(x, x, Mask(16, 16)) - 1.0) < 1e-12);
  CHECK_THROWS_AS(masked_ssim(Image(10, 10), Image(10, 10), Mask(10, 10)), ShapeError);
  CHECK_THROWS_AS(masked_ssim(x, x, Mask(16, 16, false)), DataError);
}

TEST_CASE("metrics read clear pixels only") {
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const Image hr = random_image(24, 24, rng);
    const Image sr = noisy_copy(hr, 0.05, rng);
    const Mask m = random_mask(24, 24, rng, 0.8);
    const SceneScore base = cpsnr(sr, hr, m);
    Image hr2 = hr;
    for (std::size_t i = 0; i < hr2.pixels.size(); ++i)
      if (!m.pixels[i]) hr2.pixels[i] = rng.uniform(-5.0, 5.0);
    const SceneScore s = cpsnr(sr, hr2, m);
    CHECK(s.cpsnr == base.cpsnr);
    CHECK(s.cssim == base.cssim);
  }
}

TEST_CASE("scores are deterministic and bounded") {
  Rng rng(11);
  const Image hr = random_image(28, 28, rng);
  const Image sr = noisy_copy(hr, 0.1, rng);
  const Mask m = random_mask(28, 28, rng, 0.9);
  const SceneScore a = cpsnr(sr, hr, m), b = cpsnr(sr, hr, m);
  CHECK(a.cpsnr == b.cpsnr);
  CHECK(a.cssim == b.cssim);
  CHECK(a.bias == b.bias);
  CHECK(a.cssim <= 1.0);
  CHECK(std::abs(a.shift_u) <= 3);
  CHECK(std::abs(a.shift_v) <= 3);
}

TEST_CASE("metric errors") {
  Rng rng(12);
  const Image hr = random_image(20, 20, rng);
  CHECK_THROWS_AS(cpsnr(hr, hr, Mask(20, 20, false)), DataError);
  CHECK_THROWS_AS(cpsnr(Image(20, 21), hr, Mask(20, 20)), ShapeError);
  CHECK_THROWS_AS(cpsnr(hr, hr, Mask(19, 20)), ShapeError);
  MetricOptions bad;
  bad.max_shift = 4;
  CHECK_THROWS_AS(cpsnr(hr, hr, Mask(20, 20), bad), ConfigError);
  CHECK_THROWS_AS(cpsnr(Image(6, 6), Image(6, 6), Mask(6, 6)), ShapeError);
}

TEST_CASE("bicubic examples") {
  Rng rng(13);
  SUBCASE("constant stays constant") {
    const Image out = bicubic_upscale(Image(5, 7, 0.3), 3);
    CHECK(out.height == 15);
    CHECK(out.width == 21);
    for (double v : out.pixels) CHECK(std::abs(v - 0.3) < 1e-15);
  }
  SUBCASE("r = 1 is the identity") {
    const Image lr = random_image(6, 5, rng);
    CHECK(bicubic_upscale(lr, 1).pixels == lr.pixels);
  }
  SUBCASE("linear ramp is reproduced away from the clamped edges") {
    Image lr(8, 8);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) lr.at(y, x) = 0.1 + 0.05 * y - 0.03 * x;
    const Image out = bicubic_upscale(lr, 3);
    for (std::size_t y = 6; y < 18; ++y)
      for (std::size_t x = 6; x < 18; ++x) {
        const double sy = (y + 0.5) / 3.0 - 0.5, sx = (x + 0.5) / 3.0 - 0.5;
        CHECK(std::abs(out.at(y, x) - (0.1 + 0.05 * sy - 0.03 * sx)) < 1e-6);
      }
  }
  SUBCASE("matches the direct 4x4 oracle everywhere") {
    for (std::size_t r : {2u, 3u, 4u}) {
      const Image lr = random_image(5, 6, rng);
      CHECK(max_abs_diff(bicubic_upscale(lr, r).pixels, oracle_bicubic(lr, r).pixels) < 1e-12);
    }
  }
  CHECK_THROWS_AS(bicubic_upscale(Image(3, 3), 0), ConfigError);
}

TEST_CASE("differentiable bicubic upsample agrees with the image version") {
  Rng rng(14);
  const std::size_t b = 2, c = 2, h = 4, w = 5;
  std::vector<double> v(b * c * h * w);
  for (auto& x : v) x = rng.uniform();
  const Tensor<double> t({b, c, h, w}, v);
  const Tensor<double> up = upsample_bicubic(t, 3);
  REQUIRE(up.shape() == Shape{b, c, 3 * h, 3 * w});
  for (std::size_t p = 0; p < b * c; ++p) {
    Image lr(h, w);
    std::copy(v.begin() + p * h * w, v.begin() + (p + 1) * h * w, lr.pixels.begin());
    const Image ref = oracle_bicubic(lr, 3);
    const auto d = up.data();
    const std::vector<double> plane(d.begin() + p * 9 * h * w, d.begin() + (p + 1) * 9 * h * w);
    CHECK(max_abs_diff(plane, ref.pixels) < 1e-12);
  }
  CHECK_THROWS_AS(upsample_bicubic(Tensor<double>({2, 3}, 0.0), 2), ShapeError);
}

TEST_CASE("bicubic baseline uses the clearest frame, first on ties") {
  LrStack s;
  for (int i = 0; i < 3; ++i) s.frames.emplace_back(4, 4, 0.1 * (i + 1));
  s.masks = {Mask(4, 4, false), Mask(4, 4), Mask(4, 4)};
  s.masks[0].set(0, 0, true);
  const Image out = bicubic_baseline(s, 2);
  CHECK(std::abs(out.at(3, 3) - 0.2) < 1e-15);
}

TEST_CASE("report layout") {
  std::vector<ScoredScene> scenes = {{"NIR/imgset0001", Band::nir, {30.0, 0.9, 1, -2, 0.01}},
                                     {"RED/imgset0002", Band::red, {40.0, 0.8, 0, 0, -0.02}},
                                     {"NIR/imgset0003", Band::nir, {32.0, 0.7, 0, 3, 0.0}}};
  std::ostringstream os;
  write_report_header(os);
  write_report_rows(os, scenes, true, "model");
  const std::string expected =
      "scene_id,band,cpsnr,cssim,shift_u,shift_v,bias\n"
      "NIR/imgset0001,NIR,30.000000,0.900000,1,-2,0.010000\n"
      "RED/imgset0002,RED,40.000000,0.800000,0,0,-0.020000\n"
      "NIR/imgset0003,NIR,32.000000,0.700000,0,3,0.000000\n"
      "model:mean,NIR,31.000000,0.800000,,,0.005000\n"
      "model:mean,RED,40.000000,0.800000,,,-0.020000\n"
      "model:mean,ALL,34.000000,0.800000,,,-0.003333\n";
  CHECK(os.str() == expected);

  std::ostringstream agg;
  write_report_rows(agg, {scenes[0]}, false, "bicubic");
  CHECK(agg.str() == "bicubic:mean,NIR,30.000000,0.900000,,,0.010000\nbicubic:mean,ALL,30.000000,0.900000,,,0.010000\n");
  CHECK(format_metric(1.0 / 3.0) == "0.333333");
}
