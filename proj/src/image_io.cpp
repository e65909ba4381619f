#include "dpu/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <memory>

#include "dpu/errors.hpp"

namespace dpu {

namespace {

std::string lower_ext(const std::string& path) {
  auto pos = path.rfind('.');
  if (pos == std::string::npos) return "";
  std::string ext = path.substr(pos + 1);
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext;
}

unsigned char to_byte(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(v * 255.0));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

TensorD read_image(const std::string& path) {
  const std::string ext = lower_ext(path);
  if (ext == "png") return read_png(path);
  if (ext == "pgm") return read_pgm(path);
  throw IoError("read_image: unsupported extension for " + path);
}

void write_image(const std::string& path, const TensorD& img) {
  const std::string ext = lower_ext(path);
  if (ext == "png") return write_png(path, img);
  if (ext == "pgm") return write_pgm(path, img);
  throw IoError("write_image: unsupported extension for " + path);
}

TensorD read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw IoError(path + ": expected binary PGM (P5)");
  auto next_token = [&in, &path]() {
    // skips whitespace and '#' comment lines
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    throw IoError(path + ": truncated PGM header");
  };
  const std::size_t w = std::stoul(next_token());
  const std::size_t h = std::stoul(next_token());
  const unsigned maxval = static_cast<unsigned>(std::stoul(next_token()));
  if (maxval == 0 || maxval > 255) throw IoError(path + ": only 8-bit PGM supported");
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(h * w);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IoError(path + ": truncated PGM payload");
  TensorD img({h, w});
  for (std::size_t i = 0; i < raw.size(); ++i)
    img[i] = static_cast<double>(raw[i]) / static_cast<double>(maxval);
  return img;
}

void write_pgm(const std::string& path, const TensorD& img) {
  if (img.rank() != 2) throw DimensionError("write_pgm: expected H x W tensor");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "P5\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
  std::vector<unsigned char> raw(img.numel());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(img[i]);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("failed writing " + path);
}

TensorD read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  std::vector<png_bytep> rows;
  std::vector<unsigned char> raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed reading " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);

  raw.resize(static_cast<std::size_t>(h) * w);
  rows.resize(h);
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = raw.data() + static_cast<std::size_t>(r) * w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  TensorD img({h, w});
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = raw[i] / 255.0;
  return img;
}

void write_png(const std::string& path, const TensorD& img) {
  if (img.rank() != 2) throw DimensionError("write_png: expected H x W tensor");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  const std::size_t h = img.dim(0), w = img.dim(1);
  std::vector<unsigned char> raw(h * w);
  std::vector<png_bytep> rows(h);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(img[i]);
  for (std::size_t r = 0; r < h; ++r) rows[r] = raw.data() + r * w;
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace dpu
