#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace cotmisr {

// Single-channel image with intensities normalized to [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  double& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  bool same_extent(const Image& o) const { return height == o.height && width == o.width; }
};

// Clearance map: nonzero marks a clear (usable) pixel.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, bool clear = true)
      : height(h), width(w), pixels(h * w, clear ? 1 : 0) {}

  bool at(std::size_t y, std::size_t x) const { return pixels[y * width + x] != 0; }
  void set(std::size_t y, std::size_t x, bool clear) { pixels[y * width + x] = clear ? 1 : 0; }
  std::size_t clear_count() const;
  // Fraction of clear pixels.
  double clearance() const;
};

// 16-bit grayscale PNG <-> [0,1] image. Values are scaled by 2^16 - 1 and
// rounded on write, so write->read is exact for 16-bit-representable data.
// Reading also accepts 8-bit (and lower) grayscale files.
Image read_png_image(const std::filesystem::path& path);
void write_png_image(const std::filesystem::path& path, const Image& image);

// Masks are read from any grayscale depth (nonzero = clear) and written as
// 8-bit 0/255.
Mask read_png_mask(const std::filesystem::path& path);
void write_png_mask(const std::filesystem::path& path, const Mask& mask);

}  // namespace cotmisr
