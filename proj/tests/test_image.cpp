#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "crackseg/image.hpp"

using namespace crackseg;

namespace {

std::string temp_dir() {
  static const std::string dir = [] {
    std::string d = (std::filesystem::temp_directory_path() / "crackseg_image_test")
                        .string();
    std::filesystem::create_directories(d);
    return d;
  }();
  return dir;
}

GrayImage random_image(std::mt19937& rng, int w, int h) {
  GrayImage img(w, h);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  for (float& p : img.pixels) p = d(rng);
  return img;
}

}  // namespace

TEST_CASE("quantize8 rounds half away from zero and saturates") {
  REQUIRE(quantize8(0.0f) == 0);
  REQUIRE(quantize8(1.0f) == 255);
  REQUIRE(quantize8(0.5f) == 128);  // 127.5 rounds up
  REQUIRE(quantize8(-0.2f) == 0);
  REQUIRE(quantize8(1.7f) == 255);
  REQUIRE(quantize8(100.0f / 255.0f) == 100);
}

TEST_CASE("png round trip preserves 8-bit gray levels") {
  std::mt19937 rng(3);
  GrayImage img = random_image(rng, 9, 7);
  const std::string path = temp_dir() + "/round.png";
  save_png_gray(path, img);
  const GrayImage back = load_png_gray(path);
  REQUIRE(back.width == 9);
  REQUIRE(back.height == 7);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    REQUIRE(quantize8(back.pixels[i]) == quantize8(img.pixels[i]));
}

TEST_CASE("color pngs collapse to rec601 luminance") {
  // write an rgb png through libpng directly, then read it as grayscale
  const std::string path = temp_dir() + "/color.png";
  {
    png_image out;
    std::memset(&out, 0, sizeof(out));
    out.version = PNG_IMAGE_VERSION;
    out.width = 3;
    out.height = 1;
    out.format = PNG_FORMAT_RGB;
    const unsigned char rgb[9] = {255, 0, 0, 0, 255, 0, 0, 0, 255};
    REQUIRE(png_image_write_to_file(&out, path.c_str(), 0, rgb, 0, nullptr) != 0);
  }
  const GrayImage g = load_png_gray(path);
  REQUIRE(g.width == 3);
  REQUIRE(std::fabs(g.pixels[0] - 0.299f) < 1e-6f);
  REQUIRE(std::fabs(g.pixels[1] - 0.587f) < 1e-6f);
  REQUIRE(std::fabs(g.pixels[2] - 0.114f) < 1e-6f);
}

TEST_CASE("mid gray 128 loads as 128/255") {
  const std::string path = temp_dir() + "/mid.png";
  GrayImage img(2, 2, 128.0f / 255.0f);
  save_png_gray(path, img);
  const GrayImage back = load_png_gray(path);
  for (float p : back.pixels) REQUIRE(std::fabs(p - 128.0f / 255.0f) < 1e-6f);
}

TEST_CASE("pgm binary and ascii round trips agree") {
  std::mt19937 rng(5);
  GrayImage img = random_image(rng, 6, 4);
  const std::string p5 = temp_dir() + "/p5.pgm";
  save_pgm(p5, img);
  const GrayImage back5 = load_pgm(p5);
  REQUIRE(back5.width == 6);
  REQUIRE(back5.height == 4);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    REQUIRE(quantize8(back5.pixels[i]) == quantize8(img.pixels[i]));

  // hand-write the same data as ascii P2 and expect identical pixels
  const std::string p2 = temp_dir() + "/p2.pgm";
  {
    std::ofstream out(p2);
    out << "P2\n# comment line\n6 4\n255\n";
    for (float v : img.pixels) out << static_cast<int>(quantize8(v)) << "\n";
  }
  const GrayImage back2 = load_pgm(p2);
  REQUIRE(back2.pixels == back5.pixels);
}

TEST_CASE("16-bit pgm is scaled by its maxval") {
  const std::string path = temp_dir() + "/deep.pgm";
  {
    std::ofstream out(path, std::ios::binary);
    out << "P5\n2 1\n65535\n";
    const unsigned char bytes[4] = {0xFF, 0xFF, 0x00, 0x00};  // big endian
    out.write(reinterpret_cast<const char*>(bytes), 4);
  }
  const GrayImage g = load_pgm(path);
  REQUIRE(g.pixels[0] == 1.0f);
  REQUIRE(g.pixels[1] == 0.0f);
}

TEST_CASE("malformed pgm files are rejected") {
  const std::string bad_magic = temp_dir() + "/bad_magic.pgm";
  std::ofstream(bad_magic) << "P9\n2 2\n255\n";
  REQUIRE_THROWS_AS(load_pgm(bad_magic), DataError);

  const std::string truncated = temp_dir() + "/short.pgm";
  std::ofstream(truncated, std::ios::binary) << "P5\n4 4\n255\nab";
  REQUIRE_THROWS_AS(load_pgm(truncated), DataError);

  const std::string bad_maxval = temp_dir() + "/maxval.pgm";
  std::ofstream(bad_maxval) << "P2\n1 1\n0\n0\n";
  REQUIRE_THROWS_AS(load_pgm(bad_maxval), DataError);

  REQUIRE_THROWS_AS(load_pgm(temp_dir() + "/missing.pgm"), DataError);
  REQUIRE_THROWS_AS(load_image_grayscale(temp_dir() + "/photo.webp"), DataError);
}

TEST_CASE("bilinear resize matches the half-pixel-center formula") {
  // 2x2 checker to 2x4: horizontal scale 0.5, x_src = (x+0.5)/2 - 0.5
  GrayImage img(2, 2);
  img.at(0, 0) = 0.0f;
  img.at(0, 1) = 1.0f;
  img.at(1, 0) = 1.0f;
  img.at(1, 1) = 0.0f;
  const GrayImage wide = resize_bilinear(img, 2, 4);
  REQUIRE(wide.width == 4);
  REQUIRE(wide.height == 2);
  const float want[4] = {0.0f, 0.25f, 0.75f, 1.0f};
  for (int x = 0; x < 4; ++x) REQUIRE(std::fabs(wide.at(0, x) - want[x]) < 1e-6f);
  for (int x = 0; x < 4; ++x) REQUIRE(std::fabs(wide.at(1, x) - (1.0f - want[x])) < 1e-6f);
}

TEST_CASE("resize to the same size is the identity") {
  std::mt19937 rng(7);
  const GrayImage img = random_image(rng, 5, 8);
  const GrayImage same = resize_bilinear(img, 8, 5);
  REQUIRE(same.pixels == img.pixels);
}

TEST_CASE("resizing a constant image stays constant") {
  const GrayImage img(7, 3, 0.375f);
  for (auto [h, w] : {std::pair{9, 14}, {2, 3}, {32, 32}}) {
    const GrayImage r = resize_bilinear(img, h, w);
    for (float p : r.pixels) REQUIRE(std::fabs(p - 0.375f) < 1e-6f);
  }
}

TEST_CASE("general resize agrees with a direct reimplementation") {
  std::mt19937 rng(11);
  const GrayImage img = random_image(rng, 13, 9);
  const int dw = 20, dh = 6;
  const GrayImage got = resize_bilinear(img, dh, dw);
  for (int y = 0; y < dh; ++y)
    for (int x = 0; x < dw; ++x) {
      const float sx = std::min(std::max((x + 0.5f) * 13.0f / dw - 0.5f, 0.0f), 12.0f);
      const float sy = std::min(std::max((y + 0.5f) * 9.0f / dh - 0.5f, 0.0f), 8.0f);
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, 12), y1 = std::min(y0 + 1, 8);
      const float fx = sx - x0, fy = sy - y0;
      const float want = (1 - fy) * ((1 - fx) * img.at(y0, x0) + fx * img.at(y0, x1)) +
                         fy * ((1 - fx) * img.at(y1, x0) + fx * img.at(y1, x1));
      REQUIRE(std::fabs(got.at(y, x) - want) < 1e-6f);
    }
}

TEST_CASE("resize rejects degenerate sizes") {
  const GrayImage img(4, 4, 0.5f);
  REQUIRE_THROWS_AS(resize_bilinear(img, 0, 4), DataError);
  const GrayImage tiny(1, 1, 0.5f);
  REQUIRE_THROWS_AS(resize_bilinear(tiny, 4, 4), DataError);
}
