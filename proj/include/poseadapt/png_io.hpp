// Minimal 8-bit grayscale PNG reading and writing on top of libpng.
//
// Output is byte-deterministic: compression level and filter strategy are
// pinned so regenerating a dataset reproduces identical files.
#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "poseadapt/common.hpp"

namespace poseadapt {

namespace detail {

struct FileCloser {
  std::FILE* fp = nullptr;
  ~FileCloser() {
    if (fp) std::fclose(fp);
  }
};

}  // namespace detail

// Writes `rows*cols` bytes (row-major, one byte per pixel) as a grayscale PNG.
inline void write_gray_png(const std::string& path, int rows, int cols,
                           const std::vector<unsigned char>& pixels) {
  POSEADAPT_CHECK(rows > 0 && cols > 0, "png size must be positive");
  POSEADAPT_CHECK(pixels.size() == std::size_t(rows) * std::size_t(cols),
                  "pixel buffer does not match the requested png size");

  detail::FileCloser file;
  file.fp = std::fopen(path.c_str(), "wb");
  POSEADAPT_CHECK(file.fp != nullptr, "cannot open for writing: " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  POSEADAPT_CHECK(png != nullptr, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng error while writing " + path);
  }

  png_init_io(png, file.fp);
  png_set_IHDR(png, info, png_uint_32(cols), png_uint_32(rows), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Pin the encoder configuration: dataset bytes must be reproducible.
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_write_info(png, info);

  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r)
    row_ptrs[std::size_t(r)] =
        const_cast<png_bytep>(pixels.data() + std::size_t(r) * std::size_t(cols));
  png_write_image(png, row_ptrs.data());
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

// Reads an 8-bit grayscale PNG written by write_gray_png.
inline void read_gray_png(const std::string& path, int* rows, int* cols,
                          std::vector<unsigned char>* pixels) {
  detail::FileCloser file;
  file.fp = std::fopen(path.c_str(), "rb");
  POSEADAPT_CHECK(file.fp != nullptr, "cannot open for reading: " + path);

  unsigned char sig[8];
  POSEADAPT_CHECK(std::fread(sig, 1, 8, file.fp) == 8 &&
                      png_sig_cmp(sig, 0, 8) == 0,
                  "not a png file: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  POSEADAPT_CHECK(png != nullptr, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng error while reading " + path);
  }

  png_init_io(png, file.fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY || depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("expected an 8-bit grayscale png: " + path);
  }

  *rows = int(h);
  *cols = int(w);
  pixels->assign(std::size_t(h) * std::size_t(w), 0);
  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(h));
  for (png_uint_32 r = 0; r < h; ++r)
    row_ptrs[r] = pixels->data() + std::size_t(r) * std::size_t(w);
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace poseadapt
