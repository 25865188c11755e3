#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace periscope {

/// 8-bit grayscale raster, row-major.
struct GrayImage {
  int width = 0, height = 0;
  std::vector<uint8_t> pixels;

  uint8_t at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
};

/// Depth raster in millimetres, row-major, double precision in memory
/// (serialized as float32).
struct DepthMap {
  int width = 0, height = 0;
  std::vector<double> values;

  double at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
  double& at(int x, int y) { return values[static_cast<size_t>(y) * width + x]; }
};

// ---------------------------------------------------------------------------
// PNG I/O (libpng). Only the format this library writes is accepted back:
// 8-bit grayscale, non-interlaced.
// ---------------------------------------------------------------------------

inline void write_png_gray(const std::string& path, const GrayImage& img) {
  if (img.width < 1 || img.height < 1 ||
      img.pixels.size() != static_cast<size_t>(img.width) * static_cast<size_t>(img.height))
    throw std::invalid_argument("write_png_gray: inconsistent image dimensions");
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot open PNG for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw std::runtime_error("PNG write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() +
                                             static_cast<size_t>(y) * img.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw std::runtime_error("PNG close failed: " + path);
}

inline GrayImage read_png_gray(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot open PNG: " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    std::fclose(fp);
    throw std::runtime_error("not a PNG file: " + path);
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    throw std::runtime_error("PNG read failed: " + path);
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 8 || color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("unsupported PNG format (need 8-bit grayscale): " + path);
  }
  GrayImage img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.pixels.resize(static_cast<size_t>(w) * h);
  for (png_uint_32 y = 0; y < h; ++y)
    png_read_row(png, img.pixels.data() + static_cast<size_t>(y) * w, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

// ---------------------------------------------------------------------------
// Raw float32 depth I/O: little-endian, row-major, no header (dimensions
// travel in the metadata sidecar).
// ---------------------------------------------------------------------------

inline void write_depth_f32(const std::string& path, const DepthMap& depth) {
  if (depth.values.size() !=
      static_cast<size_t>(depth.width) * static_cast<size_t>(depth.height))
    throw std::invalid_argument("write_depth_f32: inconsistent dimensions");
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot open depth file for writing: " + path);
  std::vector<unsigned char> buf(depth.values.size() * 4);
  for (size_t i = 0; i < depth.values.size(); ++i) {
    const float f = static_cast<float>(depth.values[i]);
    uint32_t u;
    std::memcpy(&u, &f, 4);
    buf[i * 4 + 0] = static_cast<unsigned char>(u);
    buf[i * 4 + 1] = static_cast<unsigned char>(u >> 8);
    buf[i * 4 + 2] = static_cast<unsigned char>(u >> 16);
    buf[i * 4 + 3] = static_cast<unsigned char>(u >> 24);
  }
  const size_t wrote = std::fwrite(buf.data(), 1, buf.size(), fp);
  const bool ok = wrote == buf.size() && std::fclose(fp) == 0;
  if (!ok) throw std::runtime_error("depth write failed: " + path);
}

inline DepthMap read_depth_f32(const std::string& path, int width, int height) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot open depth file: " + path);
  const size_t count = static_cast<size_t>(width) * static_cast<size_t>(height);
  std::vector<unsigned char> buf(count * 4);
  const size_t got = std::fread(buf.data(), 1, buf.size(), fp);
  const bool trailing = std::fgetc(fp) != EOF;
  std::fclose(fp);
  if (got != buf.size() || trailing)
    throw std::runtime_error("depth file size does not match expected dimensions: " + path);
  DepthMap d;
  d.width = width;
  d.height = height;
  d.values.resize(count);
  for (size_t i = 0; i < count; ++i) {
    const uint32_t u = static_cast<uint32_t>(buf[i * 4 + 0]) |
                       (static_cast<uint32_t>(buf[i * 4 + 1]) << 8) |
                       (static_cast<uint32_t>(buf[i * 4 + 2]) << 16) |
                       (static_cast<uint32_t>(buf[i * 4 + 3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    d.values[i] = static_cast<double>(f);
  }
  return d;
}

}  // namespace periscope
