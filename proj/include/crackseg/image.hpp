#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "crackseg/common.hpp"

namespace crackseg {

/// Row-major grayscale raster with values in [0, 1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<size_t>(w) * h, fill) {}

  float& at(int y, int x) { return pixels[static_cast<size_t>(y) * width + x]; }
  float at(int y, int x) const { return pixels[static_cast<size_t>(y) * width + x]; }
};

namespace detail {

inline bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

/// Probability/intensity to 8-bit, round half up.
inline uint8_t quantize8(float v) {
  const float clamped = std::min(1.0f, std::max(0.0f, v));
  return static_cast<uint8_t>(std::floor(clamped * 255.0f + 0.5f));
}

inline GrayImage load_png_gray(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw DataError("cannot read PNG " + path + ": " + image.message);
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path + ": " + image.message);
  }
  GrayImage out(static_cast<int>(image.width), static_cast<int>(image.height));
  if (color) {
    for (size_t i = 0; i < out.pixels.size(); ++i) {
      const float r = buf[3 * i], g = buf[3 * i + 1], b = buf[3 * i + 2];
      out.pixels[i] = (0.299f * r + 0.587f * g + 0.114f * b) / 255.0f;
    }
  } else {
    for (size_t i = 0; i < out.pixels.size(); ++i)
      out.pixels[i] = static_cast<float>(buf[i]) / 255.0f;
  }
  return out;
}

inline void save_png_gray(const std::string& path, const GrayImage& img) {
  if (img.width < 1 || img.height < 1)
    throw DataError("refusing to write empty image " + path);
  std::vector<uint8_t> buf(img.pixels.size());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = quantize8(img.pixels[i]);
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
    throw DataError("cannot write PNG " + path + ": " + image.message);
}

namespace detail {

// Reads the next whitespace-delimited token, skipping '#' comment lines.
inline std::string pnm_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw DataError("truncated PGM header in " + path);
  return tok;
}

inline int pnm_int(std::istream& in, const std::string& path) {
  const std::string tok = pnm_token(in, path);
  try {
    size_t pos = 0;
    const int v = std::stoi(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument("junk");
    return v;
  } catch (const std::exception&) {
    throw DataError("bad PGM header token '" + tok + "' in " + path);
  }
}

}  // namespace detail

inline GrayImage load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  const std::string magic = detail::pnm_token(in, path);
  if (magic != "P2" && magic != "P5")
    throw DataError("unsupported PGM magic '" + magic + "' in " + path);
  const int w = detail::pnm_int(in, path);
  const int h = detail::pnm_int(in, path);
  const int maxval = detail::pnm_int(in, path);
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
    throw DataError("bad PGM dimensions in " + path);
  GrayImage out(w, h);
  const float inv = 1.0f / static_cast<float>(maxval);
  if (magic == "P2") {
    for (auto& p : out.pixels) {
      const int v = detail::pnm_int(in, path);
      if (v < 0 || v > maxval) throw DataError("PGM sample out of range in " + path);
      p = static_cast<float>(v) * inv;
    }
  } else {
    // pnm_token already consumed the single whitespace after maxval
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<uint8_t> buf(out.pixels.size() * static_cast<size_t>(bytes));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<size_t>(in.gcount()) != buf.size())
      throw DataError("truncated PGM data in " + path);
    for (size_t i = 0; i < out.pixels.size(); ++i) {
      const int v = bytes == 1 ? buf[i] : (buf[2 * i] << 8 | buf[2 * i + 1]);
      out.pixels[i] = static_cast<float>(v) * inv;
    }
  }
  return out;
}

inline void save_pgm(const std::string& path, const GrayImage& img) {
  if (img.width < 1 || img.height < 1)
    throw DataError("refusing to write empty image " + path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  for (float v : img.pixels) out.put(static_cast<char>(quantize8(v)));
  if (!out) throw DataError("short write to " + path);
}

/// Loads PNG or PGM by extension, normalized to [0, 1] grayscale.
inline GrayImage load_image_grayscale(const std::string& path) {
  if (detail::has_suffix(path, ".png") || detail::has_suffix(path, ".PNG"))
    return load_png_gray(path);
  if (detail::has_suffix(path, ".pgm") || detail::has_suffix(path, ".PGM"))
    return load_pgm(path);
  throw DataError("unsupported image format (want .png or .pgm): " + path);
}

/// Half-pixel-center bilinear resampling: source coordinate of output pixel
/// i is (i + 0.5) * in/out - 0.5, clamped to the valid range, which keeps
/// outputs within [min(input), max(input)].
inline GrayImage resize_bilinear(const GrayImage& src, int out_h, int out_w) {
  if (src.width < 2 || src.height < 2)
    throw DataError("resize_bilinear needs at least a 2x2 source, got " +
                    std::to_string(src.width) + "x" + std::to_string(src.height));
  if (out_h < 1 || out_w < 1) throw DataError("resize_bilinear target dims must be >= 1");
  GrayImage out(out_w, out_h);
  const float sy = static_cast<float>(src.height) / static_cast<float>(out_h);
  const float sx = static_cast<float>(src.width) / static_cast<float>(out_w);
  for (int y = 0; y < out_h; ++y) {
    float fy = (static_cast<float>(y) + 0.5f) * sy - 0.5f;
    fy = std::min(static_cast<float>(src.height - 1), std::max(0.0f, fy));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const float wy = fy - static_cast<float>(y0);
    for (int x = 0; x < out_w; ++x) {
      float fx = (static_cast<float>(x) + 0.5f) * sx - 0.5f;
      fx = std::min(static_cast<float>(src.width - 1), std::max(0.0f, fx));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const float wx = fx - static_cast<float>(x0);
      const float top = src.at(y0, x0) * (1.0f - wx) + src.at(y0, x1) * wx;
      const float bot = src.at(y1, x0) * (1.0f - wx) + src.at(y1, x1) * wx;
      out.at(y, x) = top * (1.0f - wy) + bot * wy;
    }
  }
  return out;
}

}  // namespace crackseg
