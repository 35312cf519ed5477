#pragma once

// PNG reading and writing through libpng. Pixels are held interleaved as
// uint16 regardless of the file's bit depth; palette images keep their
// indices so label maps survive unchanged.

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "coadain/errors.hpp"

namespace coadain {

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;   // 1 (gray / indexed) or 3 (rgb)
  int bit_depth = 8;  // 8 or 16
  std::vector<uint16_t> data;  // row-major, interleaved channels

  uint16_t at(int y, int x, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint16_t& at(int y, int x, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }

  static PngImage blank(int width, int height, int channels, int bit_depth) {
    PngImage im;
    im.width = width;
    im.height = height;
    im.channels = channels;
    im.bit_depth = bit_depth;
    im.data.assign(static_cast<size_t>(width) * height * channels, 0);
    return im;
  }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

inline void png_warn(png_structp, png_const_charp) {}

}  // namespace detail

/// Reads an 8- or 16-bit gray, gray+alpha, rgb, rgba or palette PNG. Alpha is
/// dropped; palette images are returned as single-channel indices.
inline PngImage read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open image " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError("not a PNG file: " + path.string());
  }
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, detail::png_fail,
                                           detail::png_warn);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  PngImage im;
  std::vector<png_bytep> rows;
  std::vector<uint8_t> raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG " + path.string() + ": " + error);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (depth < 8) {
    if (color == PNG_COLOR_TYPE_PALETTE) {
      png_set_packing(png);
    } else {
      png_set_expand_gray_1_2_4_to_8(png);
    }
    depth = 8;
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  im.width = static_cast<int>(png_get_image_width(png, info));
  im.height = static_cast<int>(png_get_image_height(png, info));
  im.channels = (color & PNG_COLOR_MASK_COLOR) && color != PNG_COLOR_TYPE_PALETTE ? 3 : 1;
  im.bit_depth = depth;
  const size_t stride = png_get_rowbytes(png, info);
  raw.resize(stride * im.height);
  rows.resize(im.height);
  for (int y = 0; y < im.height; ++y) rows[y] = raw.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  im.data.resize(static_cast<size_t>(im.width) * im.height * im.channels);
  const size_t per_row = static_cast<size_t>(im.width) * im.channels;
  for (int y = 0; y < im.height; ++y) {
    const uint8_t* r = rows[y];
    uint16_t* out = im.data.data() + per_row * y;
    if (depth == 16) {
      for (size_t i = 0; i < per_row; ++i) out[i] = static_cast<uint16_t>((r[2 * i] << 8) | r[2 * i + 1]);
    } else {
      for (size_t i = 0; i < per_row; ++i) out[i] = r[i];
    }
  }
  return im;
}

/// Writes gray or rgb at 8 or 16 bits. Output bytes depend only on the
/// pixels, so identical images give identical files.
inline void write_png(const std::filesystem::path& path, const PngImage& im) {
  if (im.channels != 1 && im.channels != 3) throw ValidationError("write_png: 1 or 3 channels required");
  if (im.bit_depth != 8 && im.bit_depth != 16) throw ValidationError("write_png: bit depth must be 8 or 16");
  if (im.width < 1 || im.height < 1 ||
      im.data.size() != static_cast<size_t>(im.width) * im.height * im.channels) {
    throw DimensionError("write_png: pixel buffer does not match the geometry");
  }
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  }
  std::unique_ptr<std::FILE, detail::FileCloser> file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, detail::png_fail,
                                            detail::png_warn);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  const size_t per_row = static_cast<size_t>(im.width) * im.channels;
  const size_t bytes = im.bit_depth / 8;
  std::vector<uint8_t> raw(per_row * bytes * im.height);
  std::vector<png_bytep> rows(im.height);
  for (int y = 0; y < im.height; ++y) {
    uint8_t* r = raw.data() + per_row * bytes * y;
    rows[y] = r;
    const uint16_t* src = im.data.data() + per_row * y;
    for (size_t i = 0; i < per_row; ++i) {
      if (bytes == 2) {
        r[2 * i] = static_cast<uint8_t>(src[i] >> 8);
        r[2 * i + 1] = static_cast<uint8_t>(src[i] & 0xff);
      } else {
        if (src[i] > 255) {
          png_destroy_write_struct(&png, &info);
          throw ValidationError("write_png: value exceeds 8-bit range in " + path.string());
        }
        r[i] = static_cast<uint8_t>(src[i]);
      }
    }
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string() + ": " + error);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(im.width), static_cast<png_uint_32>(im.height),
               im.bit_depth, im.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw IoError("failed writing " + path.string());
}

}  // namespace coadain
