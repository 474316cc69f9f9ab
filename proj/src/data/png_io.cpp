#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>

#include "cotmisr/errors.hpp"
#include "cotmisr/image.hpp"

namespace cotmisr {

std::size_t Mask::clear_count() const {
  return static_cast<std::size_t>(std::count_if(pixels.begin(), pixels.end(), [](auto v) { return v != 0; }));
}

double Mask::clearance() const {
  return pixels.empty() ? 0.0 : static_cast<double>(clear_count()) / static_cast<double>(pixels.size());
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct RawGray {
  std::size_t height = 0;
  std::size_t width = 0;
  int bit_depth = 0;
  std::vector<std::uint16_t> values;
};

RawGray read_gray(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DataError("cannot open " + path.string());
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw DataError("not a PNG file: " + path.string());
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialisation failed");
  }
  RawGray raw;
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const auto color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("expected a single-channel grayscale PNG: " + path.string());
  }
  raw.bit_depth = png_get_bit_depth(png, info);
  if (raw.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (raw.bit_depth == 16) png_set_swap(png);
  png_read_update_info(png, info);

  raw.height = png_get_image_height(png, info);
  raw.width = png_get_image_width(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  buffer.resize(row_bytes * raw.height);
  rows.resize(raw.height);
  for (std::size_t y = 0; y < raw.height; ++y) rows[y] = buffer.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  raw.values.resize(raw.height * raw.width);
  if (raw.bit_depth == 16) {
    for (std::size_t i = 0; i < raw.values.size(); ++i) {
      std::uint16_t v;
      std::memcpy(&v, buffer.data() + 2 * i, 2);
      raw.values[i] = v;
    }
  } else {
    for (std::size_t y = 0; y < raw.height; ++y)
      for (std::size_t x = 0; x < raw.width; ++x) raw.values[y * raw.width + x] = buffer[y * row_bytes + x];
  }
  return raw;
}

void write_gray(const std::filesystem::path& path, std::size_t height, std::size_t width, int bit_depth,
                const std::vector<std::uint16_t>& values) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  const std::size_t bytes = bit_depth == 16 ? 2 : 1;
  std::vector<png_byte> buffer(height * width * bytes);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (bytes == 2) {
      buffer[2 * i] = static_cast<png_byte>(values[i] >> 8);  // PNG is big-endian
      buffer[2 * i + 1] = static_cast<png_byte>(values[i] & 0xff);
    } else {
      buffer[i] = static_cast<png_byte>(values[i]);
    }
  }
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = buffer.data() + y * width * bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_png_image(const std::filesystem::path& path) {
  const RawGray raw = read_gray(path);
  const double full_scale = raw.bit_depth == 16 ? 65535.0 : 255.0;
  Image img(raw.height, raw.width);
  for (std::size_t i = 0; i < raw.values.size(); ++i) img.pixels[i] = raw.values[i] / full_scale;
  return img;
}

void write_png_image(const std::filesystem::path& path, const Image& image) {
  std::vector<std::uint16_t> values(image.pixels.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp(image.pixels[i], 0.0, 1.0);
    values[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
  }
  write_gray(path, image.height, image.width, 16, values);
}

Mask read_png_mask(const std::filesystem::path& path) {
  const RawGray raw = read_gray(path);
  Mask mask(raw.height, raw.width, false);
  for (std::size_t i = 0; i < raw.values.size(); ++i) mask.pixels[i] = raw.values[i] != 0 ? 1 : 0;
  return mask;
}

void write_png_mask(const std::filesystem::path& path, const Mask& mask) {
  std::vector<std::uint16_t> values(mask.pixels.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = mask.pixels[i] ? 255 : 0;
  write_gray(path, mask.height, mask.width, 8, values);
}

}  // namespace cotmisr
