// PNG read/write via libpng, restricted to the two layouts the pipeline
// actually stores: 8-bit grayscale planes (images, mask id planes) and 8-bit
// RGB (colorized mask previews).
#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "radious/error.hpp"

namespace radious::io {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, height*width

  std::uint8_t at(int y, int x) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t& at(int y, int x) {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) fail("io", "cannot open '" + path + "'");
  return f;
}

}  // namespace detail

// Reads a PNG as an 8-bit grayscale plane. Gray inputs are returned as-is
// (16-bit depth narrowed, alpha stripped); paletted inputs are returned as raw
// palette indices, which is exactly the id plane convention used for masks.
// RGB inputs are reduced by libpng's rgb-to-gray transform.
inline GrayImage read_png_gray8(const std::string& path) {
  detail::FilePtr file = detail::open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("io", "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("io", "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("io", "failed to decode '" + path + "'");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) {
    // Keep raw indices; just unpack sub-byte depths to one byte per pixel.
    if (depth < 8) png_set_packing(png);
  } else {
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray(png, 1, -1, -1);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);

  GrayImage out;
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = out.pixels.data() + static_cast<std::size_t>(y) * out.width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

namespace detail {

inline void write_png(const std::string& path, int width, int height, int color_type,
                      const std::uint8_t* data, std::size_t stride) {
  if (width <= 0 || height <= 0) fail("parameter", "png dimensions must be positive");
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("io", "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("io", "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("io", "failed to encode '" + path + "'");
  }
  png_init_io(png, file.get());
  // Fixed encoder settings so identical planes encode to identical bytes.
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(data + static_cast<std::size_t>(y) * stride);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

inline void write_png_gray8(const std::string& path, const GrayImage& img) {
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height)
    fail("parameter", "gray image buffer does not match its extents");
  detail::write_png(path, img.width, img.height, PNG_COLOR_TYPE_GRAY, img.pixels.data(),
                    static_cast<std::size_t>(img.width));
}

// `rgb` is row-major height*width*3.
inline void write_png_rgb8(const std::string& path, int width, int height,
                           const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
    fail("parameter", "rgb buffer does not match its extents");
  detail::write_png(path, width, height, PNG_COLOR_TYPE_RGB, rgb.data(),
                    static_cast<std::size_t>(width) * 3);
}

}  // namespace radious::io
