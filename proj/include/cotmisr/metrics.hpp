#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "cotmisr/data.hpp"
#include "cotmisr/image.hpp"

namespace cotmisr {

struct MetricOptions {
  int max_shift = 3;  // search radius in HR pixels, must not exceed border
  int border = 3;     // HR crop on each side
  double cap_db = 100.0;
};

struct SceneScore {
  double cpsnr = 0.0;
  double cssim = 0.0;
  int shift_u = 0;  // best cPSNR shift, relative to the aligned position
  int shift_v = 0;
  double bias = 0.0;  // mean(HR - SR) over clear pixels at the best shift
};

// Clearance-masked, bias-corrected PSNR maximized over integer shifts, plus
// the analogous cSSIM (its own max over the same shifts). The metric only
// reads SR/HR values through differences against a pivot clear pixel, which
// makes cpsnr(sr + c) == cpsnr(sr) whenever sr + c is computed exactly.
SceneScore cpsnr(const Image& sr, const Image& hr, const Mask& hr_mask, const MetricOptions& opts = {});
double cssim(const Image& sr, const Image& hr, const Mask& hr_mask, const MetricOptions& opts = {});

// Mask-weighted SSIM (11x11 Gaussian window, sigma 1.5, k1 0.01, k2 0.03,
// dynamic range 1): local statistics use the clear pixels only, the map is
// averaged over clear centres whose window lies inside the image.
double masked_ssim(const Image& x, const Image& y, const Mask& mask);

// Catmull-Rom (a = -0.5) bicubic upscaling with clamped edges.
Image bicubic_upscale(const Image& lr, std::size_t r);

// Bicubic baseline of a stack: the clearest frame (lowest index on ties),
// upscaled.
Image bicubic_baseline(const LrStack& stack, std::size_t r);

struct ScoredScene {
  std::string scene_id;
  Band band = Band::nir;
  SceneScore score;
};

// CSV with columns scene_id,band,cpsnr,cssim,shift_u,shift_v,bias. After the
// per-scene rows come aggregate rows "<label>:mean" for NIR, RED (when
// present) and ALL.
void write_report_header(std::ostream& os);
void write_report_rows(std::ostream& os, const std::vector<ScoredScene>& scenes, bool per_scene,
                       const std::string& label);
SceneScore mean_score(const std::vector<ScoredScene>& scenes);
std::string format_metric(double v);

}  // namespace cotmisr
