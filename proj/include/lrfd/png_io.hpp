#pragma once

#include <png.h>

#include <cstdio>
#include <string>
#include <vector>

#include "lrfd/tensor.hpp"

namespace lrfd {

// Images are [3,H,W] float tensors in [-1,1]; files are 8-bit RGB PNG.

inline std::uint8_t to_byte(float v) {
  float t = (v + 1.0f) * 0.5f;
  if (t < 0.0f) t = 0.0f;
  if (t > 1.0f) t = 1.0f;
  return std::uint8_t(t * 255.0f + 0.5f);
}

inline float from_byte(std::uint8_t b) { return float(b) / 255.0f * 2.0f - 1.0f; }

inline void write_png(const std::string& path, const Tensor<float>& img) {
  require(img.rank() == 3 && img.dim(0) == 3, "write_png wants [3,H,W], got ",
          shape_str(img));
  const int H = img.dim(1), W = img.dim(2);
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  require(fp != nullptr, "cannot open for writing: ", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    fail("png write failed: ", path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, W, H, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> row(std::size_t(W) * 3);
  for (int h = 0; h < H; ++h) {
    for (int w = 0; w < W; ++w)
      for (int c = 0; c < 3; ++c) row[std::size_t(w) * 3 + c] = to_byte(img.at3(c, h, w));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline Tensor<float> read_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  require(fp != nullptr, "cannot open for reading: ", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    fail("png read failed: ", path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int W = int(png_get_image_width(png, info));
  const int H = int(png_get_image_height(png, info));
  // normalize whatever comes in to 8-bit RGB
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  Tensor<float> img({3, H, W});
  std::vector<std::uint8_t> row(png_get_rowbytes(png, info));
  for (int h = 0; h < H; ++h) {
    png_read_row(png, row.data(), nullptr);
    for (int w = 0; w < W; ++w)
      for (int c = 0; c < 3; ++c) img.at3(c, h, w) = from_byte(row[std::size_t(w) * 3 + c]);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

}  // namespace lrfd
