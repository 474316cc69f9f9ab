#include "cotmisr/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <string>

#include "cotmisr/errors.hpp"

namespace cotmisr {

namespace {

constexpr int kWindow = 11;
constexpr int kRadius = kWindow / 2;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> g{};
  double s = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kRadius;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

struct ShiftResult {
  double psnr = 0.0;
  double ssim = 0.0;
  double bias = 0.0;
};

void check_inputs(const Image& sr, const Image& hr, const Mask& mask, const MetricOptions& opts) {
  if (!sr.same_extent(hr)) throw ShapeError("metric: SR and HR extents differ");
  if (mask.height != hr.height || mask.width != hr.width) throw ShapeError("metric: mask and HR extents differ");
  if (opts.border < 0 || opts.max_shift < 0 || opts.max_shift > opts.border)
    throw ConfigError("metric: need 0 <= max_shift <= border");
  if (hr.height <= static_cast<std::size_t>(2 * opts.border) || hr.width <= static_cast<std::size_t>(2 * opts.border))
    throw ShapeError("metric: image smaller than the border crop");
}

// Scores SR window at origin (u, v) against the HR interior crop.
ShiftResult score_shift(const Image& sr, const Image& hr, const Mask& mask, const MetricOptions& opts, std::size_t u,
                        std::size_t v, bool want_ssim) {
  const auto b = static_cast<std::size_t>(opts.border);
  const std::size_t ch = hr.height - 2 * b, cw = hr.width - 2 * b;

  // Pivot: first clear pixel of the crop.
  std::size_t py = 0, px = 0;
  bool found = false;
  for (std::size_t y = 0; y < ch && !found; ++y)
    for (std::size_t x = 0; x < cw && !found; ++x)
      if (mask.at(b + y, b + x)) {
        py = y;
        px = x;
        found = true;
      }
  if (!found) throw DataError("metric: crop has no clear HR pixels");
  const double hr_p = hr.at(b + py, b + px), sr_p = sr.at(u + py, v + px);

  // e = (hr - hr_p) - (sr - sr_p) equals (hr - sr) minus a constant.
  std::vector<double> e(ch * cw, 0.0);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < ch; ++y)
    for (std::size_t x = 0; x < cw; ++x) {
      if (!mask.at(b + y, b + x)) continue;
      const double d = (hr.at(b + y, b + x) - hr_p) - (sr.at(u + y, v + x) - sr_p);
      e[y * cw + x] = d;
      sum += d;
      ++n;
    }
  const double mean_e = sum / static_cast<double>(n);
  double sq = 0.0;
  for (std::size_t y = 0; y < ch; ++y)
    for (std::size_t x = 0; x < cw; ++x) {
      if (!mask.at(b + y, b + x)) continue;
      const double r = e[y * cw + x] - mean_e;
      sq += r * r;
    }
  const double mse = sq / static_cast<double>(n);

  ShiftResult out;
  out.bias = mean_e + (hr_p - sr_p);
  out.psnr = mse > 0.0 ? std::min(opts.cap_db, -10.0 * std::log10(mse)) : opts.cap_db;
  if (want_ssim) {
    Image xc(ch, cw), yc(ch, cw);
    Mask mc(ch, cw, false);
    for (std::size_t y = 0; y < ch; ++y)
      for (std::size_t x = 0; x < cw; ++x) {
        xc.at(y, x) = hr.at(b + y, b + x);
        // bias-corrected SR, expressed through the pivot difference
        yc.at(y, x) = hr_p + ((sr.at(u + y, v + x) - sr_p) + mean_e);
        mc.pixels[y * cw + x] = mask.at(b + y, b + x) ? 1 : 0;
      }
    out.ssim = masked_ssim(xc, yc, mc);
  }
  return out;
}

SceneScore search(const Image& sr, const Image& hr, const Mask& mask, const MetricOptions& opts, bool want_ssim) {
  check_inputs(sr, hr, mask, opts);
  const int side = 2 * opts.max_shift + 1;
  std::vector<ShiftResult> results(static_cast<std::size_t>(side * side));
  std::vector<std::exception_ptr> errors(results.size());
#pragma omp parallel for schedule(dynamic) if (want_ssim)
  for (int i = 0; i < side * side; ++i) {
    const int du = i / side - opts.max_shift, dv = i % side - opts.max_shift;
    try {
      results[static_cast<std::size_t>(i)] =
          score_shift(sr, hr, mask, opts, static_cast<std::size_t>(opts.border + du),
                      static_cast<std::size_t>(opts.border + dv), want_ssim);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);

  SceneScore best;
  best.cpsnr = -std::numeric_limits<double>::infinity();
  best.cssim = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < side * side; ++i) {
    const auto& r = results[static_cast<std::size_t>(i)];
    if (r.psnr > best.cpsnr) {
      best.cpsnr = r.psnr;
      best.shift_u = i / side - opts.max_shift;
      best.shift_v = i % side - opts.max_shift;
      best.bias = r.bias;
    }
    best.cssim = std::max(best.cssim, r.ssim);
  }
  if (!want_ssim) best.cssim = 0.0;
  return best;
}

}  // namespace

SceneScore cpsnr(const Image& sr, const Image& hr, const Mask& hr_mask, const MetricOptions& opts) {
  return search(sr, hr, hr_mask, opts, true);
}

double cssim(const Image& sr, const Image& hr, const Mask& hr_mask, const MetricOptions& opts) {
  return search(sr, hr, hr_mask, opts, true).cssim;
}

double masked_ssim(const Image& x, const Image& y, const Mask& mask) {
  if (!x.same_extent(y) || mask.height != x.height || mask.width != x.width)
    throw ShapeError("ssim: extents differ");
  if (x.height < static_cast<std::size_t>(kWindow) || x.width < static_cast<std::size_t>(kWindow))
    throw ShapeError("ssim: image smaller than the 11x11 window");
  static const auto g = gaussian_taps();
  const std::size_t h = x.height, w = x.width;
  const std::size_t ow = w - kWindow + 1, oh = h - kWindow + 1;

  // Horizontal pass over the six masked moments, then vertical.
  constexpr int kMoments = 6;
  std::vector<double> horiz(kMoments * h * ow, 0.0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double acc[kMoments] = {};
      for (int j = 0; j < kWindow; ++j) {
        const std::size_t col = c + static_cast<std::size_t>(j);
        if (!mask.at(r, col)) continue;
        const double gx = g[j], a = x.at(r, col), bval = y.at(r, col);
        acc[0] += gx;
        acc[1] += gx * a;
        acc[2] += gx * bval;
        acc[3] += gx * a * a;
        acc[4] += gx * bval * bval;
        acc[5] += gx * a * bval;
      }
      for (int m = 0; m < kMoments; ++m) horiz[(m * h + r) * ow + c] = acc[m];
    }

  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      if (!mask.at(r + kRadius, c + kRadius)) continue;
      double s[kMoments] = {};
      for (int i = 0; i < kWindow; ++i) {
        const std::size_t row = r + static_cast<std::size_t>(i);
        for (int m = 0; m < kMoments; ++m) s[m] += g[i] * horiz[(m * h + row) * ow + c];
      }
      const double mx = s[1] / s[0], my = s[2] / s[0];
      const double vx = s[3] / s[0] - mx * mx, vy = s[4] / s[0] - my * my, cxy = s[5] / s[0] - mx * my;
      total += ((2.0 * mx * my + kC1) * (2.0 * cxy + kC2)) / ((mx * mx + my * my + kC1) * (vx + vy + kC2));
      ++count;
    }
  if (count == 0) throw DataError("ssim: no clear window centre");
  return total / static_cast<double>(count);
}

namespace {

double catmull_rom(double t) {
  t = std::abs(t);
  if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

struct Taps {
  std::array<std::size_t, 4> index;
  std::array<double, 4> weight;
};

std::vector<Taps> make_taps(std::size_t n_in, std::size_t r) {
  std::vector<Taps> taps(n_in * r);
  const auto last = static_cast<std::int64_t>(n_in) - 1;
  for (std::size_t o = 0; o < taps.size(); ++o) {
    const double src = (static_cast<double>(o) + 0.5) / static_cast<double>(r) - 0.5;
    const double base = std::floor(src);
    const double t = src - base;
    for (int j = 0; j < 4; ++j) {
      const auto idx = static_cast<std::int64_t>(base) - 1 + j;
      taps[o].index[j] = static_cast<std::size_t>(std::clamp<std::int64_t>(idx, 0, last));
      taps[o].weight[j] = catmull_rom(t - static_cast<double>(j - 1));
    }
  }
  return taps;
}

}  // namespace

Image bicubic_upscale(const Image& lr, std::size_t r) {
  if (r == 0) throw ConfigError("bicubic: scale must be >= 1");
  if (lr.height == 0 || lr.width == 0) throw ShapeError("bicubic: empty image");
  const auto ty = make_taps(lr.height, r), tx = make_taps(lr.width, r);
  Image rows(lr.height, lr.width * r);
  for (std::size_t y = 0; y < lr.height; ++y)
    for (std::size_t x = 0; x < rows.width; ++x) {
      double s = 0.0;
      for (int j = 0; j < 4; ++j) s += tx[x].weight[j] * lr.at(y, tx[x].index[j]);
      rows.at(y, x) = s;
    }
  Image out(lr.height * r, lr.width * r);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) {
      double s = 0.0;
      for (int j = 0; j < 4; ++j) s += ty[y].weight[j] * rows.at(ty[y].index[j], x);
      out.at(y, x) = s;
    }
  return out;
}

Image bicubic_baseline(const LrStack& stack, std::size_t r) {
  stack.validate();
  std::size_t best = 0;
  for (std::size_t i = 1; i < stack.size(); ++i)
    if (stack.clearance(i) > stack.clearance(best)) best = i;
  return bicubic_upscale(stack.frames[best], r);
}

std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

SceneScore mean_score(const std::vector<ScoredScene>& scenes) {
  SceneScore m;
  if (scenes.empty()) return m;
  for (const auto& s : scenes) {
    m.cpsnr += s.score.cpsnr;
    m.cssim += s.score.cssim;
    m.bias += s.score.bias;
  }
  const auto n = static_cast<double>(scenes.size());
  m.cpsnr /= n;
  m.cssim /= n;
  m.bias /= n;
  return m;
}

void write_report_header(std::ostream& os) { os << "scene_id,band,cpsnr,cssim,shift_u,shift_v,bias\n"; }

void write_report_rows(std::ostream& os, const std::vector<ScoredScene>& scenes, bool per_scene,
                       const std::string& label) {
  if (per_scene)
    for (const auto& s : scenes)
      os << s.scene_id << ',' << band_name(s.band) << ',' << format_metric(s.score.cpsnr) << ','
         << format_metric(s.score.cssim) << ',' << s.score.shift_u << ',' << s.score.shift_v << ','
         << format_metric(s.score.bias) << '\n';
  auto aggregate = [&](const std::string& band, const std::vector<ScoredScene>& subset) {
    if (subset.empty()) return;
    const auto m = mean_score(subset);
    os << label << ":mean," << band << ',' << format_metric(m.cpsnr) << ',' << format_metric(m.cssim) << ",,,"
       << format_metric(m.bias) << '\n';
  };
  for (Band band : {Band::nir, Band::red}) {
    std::vector<ScoredScene> subset;
    std::copy_if(scenes.begin(), scenes.end(), std::back_inserter(subset),
                 [&](const ScoredScene& s) { return s.band == band; });
    aggregate(band_name(band), subset);
  }
  aggregate("ALL", scenes);
}

}  // namespace cotmisr
