#include "cmr/io/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "cmr/common.hpp"

namespace cmr::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void writePng(const std::string& path, int width, int height, int bitDepth, int colorType,
              const std::vector<png_bytep>& rows) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("png: cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: allocation failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png: write to '" + path + "' failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bitDepth, colorType,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bitDepth == 16) png_set_swap(png);  // rows are little-endian in memory
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct PngImage {
  int width = 0, height = 0, bitDepth = 0, channels = 0;
  std::vector<std::uint16_t> data;  // widened to 16 bits per sample
};

PngImage readPng(const std::string& path, int expectChannels, int expectDepth) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("png: cannot open '" + path + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("png: allocation failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw SchemaError("png: '" + path + "' is not a readable PNG");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  int bitDepth = png_get_bit_depth(png, info);
  int colorType = png_get_color_type(png, info);
  if (colorType == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (colorType == PNG_COLOR_TYPE_GRAY && bitDepth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (bitDepth == 16) png_set_swap(png);
  png_read_update_info(png, info);

  PngImage img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.bitDepth = png_get_bit_depth(png, info);
  img.channels = static_cast<int>(png_get_channels(png, info));
  if (img.channels != expectChannels || img.bitDepth != expectDepth) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw SchemaError("png: '" + path + "' has unexpected format (channels=" + std::to_string(img.channels) +
                      ", depth=" + std::to_string(img.bitDepth) + ")");
  }

  std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(img.height) * stride * (img.bitDepth / 8));
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = raw.data() + static_cast<std::size_t>(y) * stride * (img.bitDepth / 8);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  img.data.resize(static_cast<std::size_t>(img.height) * stride);
  if (img.bitDepth == 8) {
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = raw[i];
  } else {
    const std::uint16_t* p = reinterpret_cast<const std::uint16_t*>(raw.data());
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = p[i];
  }
  return img;
}

std::uint8_t quantize8(float v) {
  float c = std::min(std::max(v, 0.f), 1.f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

void writePngRgb8(const std::string& path, const TensorF& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw Error("writePngRgb8: image must be [3,H,W]");
  const int H = image.dim(1), W = image.dim(2);
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(H) * W * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        raw[(static_cast<std::size_t>(y) * W + x) * 3 + c] = quantize8(image.at(c, y, x));
  std::vector<png_bytep> rows(static_cast<std::size_t>(H));
  for (int y = 0; y < H; ++y) rows[static_cast<std::size_t>(y)] = raw.data() + static_cast<std::size_t>(y) * W * 3;
  writePng(path, W, H, 8, PNG_COLOR_TYPE_RGB, rows);
}

TensorF readPngRgb8(const std::string& path) {
  PngImage img = readPng(path, 3, 8);
  TensorF out({3, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = static_cast<float>(img.data[(static_cast<std::size_t>(y) * img.width + x) * 3 + c]) / 255.f;
  return out;
}

void writePngGray8(const std::string& path, const Tensor<std::uint8_t>& mask) {
  if (mask.rank() != 2) throw Error("writePngGray8: mask must be [H,W]");
  const int H = mask.dim(0), W = mask.dim(1);
  std::vector<png_bytep> rows(static_cast<std::size_t>(H));
  for (int y = 0; y < H; ++y)
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(mask.data() + static_cast<std::size_t>(y) * W);
  writePng(path, W, H, 8, PNG_COLOR_TYPE_GRAY, rows);
}

Tensor<std::uint8_t> readPngGray8(const std::string& path) {
  PngImage img = readPng(path, 1, 8);
  Tensor<std::uint8_t> out({img.height, img.width});
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::uint8_t>(img.data[static_cast<std::size_t>(i)]);
  return out;
}

void writePngGray16(const std::string& path, const TensorF& map) {
  if (map.rank() != 2) throw Error("writePngGray16: map must be [H,W]");
  const int H = map.dim(0), W = map.dim(1);
  std::vector<std::uint16_t> raw(static_cast<std::size_t>(H) * W);
  for (std::int64_t i = 0; i < map.size(); ++i) {
    float c = std::min(std::max(map[i], 0.f), 1.f);
    raw[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(std::lround(c * 65535.0f));
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(H));
  for (int y = 0; y < H; ++y)
    rows[static_cast<std::size_t>(y)] = reinterpret_cast<png_bytep>(raw.data() + static_cast<std::size_t>(y) * W);
  writePng(path, W, H, 16, PNG_COLOR_TYPE_GRAY, rows);
}

TensorF readPngGray16(const std::string& path) {
  PngImage img = readPng(path, 1, 16);
  TensorF out({img.height, img.width});
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(img.data[static_cast<std::size_t>(i)]) / 65535.f;
  return out;
}

}  // namespace cmr::io
