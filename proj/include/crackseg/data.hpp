#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/image.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

struct Sample {
  std::string id;
  GrayImage image;
  GrayImage mask;
};

struct Dataset {
  std::vector<Sample> samples;
  std::string tag;  // train / val / test, empty for unsplit

  size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

namespace detail {

inline void validate_dataset(const Dataset& ds, const char* origin) {
  std::vector<std::string> ids;
  for (const Sample& s : ds.samples) {
    if (s.image.width != s.mask.width || s.image.height != s.mask.height)
      throw DataError(std::string(origin) + ": sample " + s.id +
                      " image/mask dimensions differ");
    for (float v : s.image.pixels)
      if (!(v >= 0.0f && v <= 1.0f))
        throw DataError(std::string(origin) + ": sample " + s.id +
                        " image value outside [0,1]");
    for (float v : s.mask.pixels)
      if (!(v >= 0.0f && v <= 1.0f))
        throw DataError(std::string(origin) + ": sample " + s.id +
                        " mask value outside [0,1]");
    ids.push_back(s.id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw DataError(std::string(origin) + ": duplicate sample ids");
}

inline bool is_raster_file(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".png" || ext == ".PNG" || ext == ".pgm" || ext == ".PGM";
}

// seed stride keeps per-sample streams independent so that the first k
// samples of gen_synthetic(n) and gen_synthetic(m >= k) coincide
inline constexpr unsigned kSampleSeedStride = 1000003u;

}  // namespace detail

/// Loads stem-paired images and masks, grayscale-converts and resizes both
/// to size x size. Masks stay continuous; binarization is a metrics concern.
inline Dataset load_dataset(const std::string& image_dir, const std::string& mask_dir,
                            int size) {
  namespace fs = std::filesystem;
  if (size < 2) throw ConfigError("dataset size must be >= 2");
  if (!fs::is_directory(image_dir)) throw DataError("not a directory: " + image_dir);
  if (!fs::is_directory(mask_dir)) throw DataError("not a directory: " + mask_dir);

  std::map<std::string, fs::path> images, masks;
  for (const auto& e : fs::directory_iterator(image_dir))
    if (e.is_regular_file() && detail::is_raster_file(e.path()))
      images[e.path().stem().string()] = e.path();
  for (const auto& e : fs::directory_iterator(mask_dir))
    if (e.is_regular_file() && detail::is_raster_file(e.path()))
      masks[e.path().stem().string()] = e.path();
  if (images.empty()) throw DataError("no images found in " + image_dir);

  std::string unmatched;
  for (const auto& [stem, p] : images)
    if (!masks.count(stem)) unmatched += unmatched.empty() ? stem : ", " + stem;
  if (!unmatched.empty())
    throw DataError("images without masks: " + unmatched);

  Dataset ds;
  for (const auto& [stem, p] : images) {
    Sample s;
    s.id = stem;
    s.image = resize_bilinear(load_image_grayscale(p.string()), size, size);
    s.mask = resize_bilinear(load_image_grayscale(masks.at(stem).string()), size, size);
    ds.samples.push_back(std::move(s));
  }
  detail::validate_dataset(ds, "load_dataset");
  return ds;
}

/// Convenience for the canonical <root>/images + <root>/masks layout.
inline Dataset load_dataset_root(const std::string& root, int size) {
  return load_dataset(root + "/images", root + "/masks", size);
}

/// Seeded shuffle then contiguous partition. Validation and test take
/// floor(n * ratio) samples each; training keeps the remainder.
inline std::array<Dataset, 3> split(const Dataset& ds, double train_ratio,
                                    double val_ratio, double test_ratio,
                                    unsigned seed) {
  if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0)
    throw ConfigError("split ratios must be non-negative");
  if (std::fabs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-6)
    throw ConfigError("split ratios must sum to 1");
  const size_t n = ds.size();
  if (n < 3 && train_ratio > 0 && val_ratio > 0 && test_ratio > 0)
    throw DataError("cannot three-way split a dataset of " + std::to_string(n));

  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937 rng(seed);
  for (size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);

  const size_t n_val = static_cast<size_t>(std::floor(static_cast<double>(n) * val_ratio));
  const size_t n_test = static_cast<size_t>(std::floor(static_cast<double>(n) * test_ratio));
  const size_t n_train = n - n_val - n_test;

  std::array<Dataset, 3> out;
  out[0].tag = "train";
  out[1].tag = "val";
  out[2].tag = "test";
  for (size_t i = 0; i < n; ++i) {
    const Sample& s = ds.samples[idx[i]];
    if (i < n_train)
      out[0].samples.push_back(s);
    else if (i < n_train + n_val)
      out[1].samples.push_back(s);
    else
      out[2].samples.push_back(s);
  }
  return out;
}

namespace detail {

// Signed distance from pixel center to a segment, for stroke rasterization.
inline float point_segment_dist(float px, float py, float x0, float y0, float x1,
                                float y1) {
  const float dx = x1 - x0, dy = y1 - y0;
  const float len2 = dx * dx + dy * dy;
  float t = len2 > 0.0f ? ((px - x0) * dx + (py - y0) * dy) / len2 : 0.0f;
  t = std::min(1.0f, std::max(0.0f, t));
  const float cx = x0 + t * dx, cy = y0 + t * dy;
  return std::sqrt((px - cx) * (px - cx) + (py - cy) * (py - cy));
}

inline void draw_stroke(GrayImage& image, GrayImage& mask, float x0, float y0,
                        float x1, float y1, float radius, float intensity) {
  const int lo_y = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - radius - 1)));
  const int hi_y = std::min(image.height - 1,
                            static_cast<int>(std::ceil(std::max(y0, y1) + radius + 1)));
  const int lo_x = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - radius - 1)));
  const int hi_x = std::min(image.width - 1,
                            static_cast<int>(std::ceil(std::max(x0, x1) + radius + 1)));
  for (int y = lo_y; y <= hi_y; ++y)
    for (int x = lo_x; x <= hi_x; ++x)
      if (point_segment_dist(static_cast<float>(x), static_cast<float>(y), x0, y0, x1,
                             y1) <= radius) {
        image.at(y, x) = intensity;
        mask.at(y, x) = 1.0f;
      }
}

}  // namespace detail

/// Deterministic stand-in for a crack dataset: light textured background
/// with one dark polyline crossing the full width. Masks are exactly 0/1.
/// Sample i depends only on (seed, i), never on n.
inline Dataset gen_synthetic(int n, int size, unsigned seed) {
  if (n < 0) throw ConfigError("gen_synthetic: n must be >= 0");
  if (size < 8) throw ConfigError("gen_synthetic: size must be >= 8");
  Dataset ds;
  for (int i = 0; i < n; ++i) {
    std::mt19937 rng(seed * detail::kSampleSeedStride + static_cast<unsigned>(i));
    std::uniform_real_distribution<float> bg(0.55f, 0.85f);
    std::uniform_real_distribution<float> jitter(-0.02f, 0.02f);

    // coarse noise grid blown up bilinearly gives a blotchy plaster texture
    const int coarse = std::max(2, size / 8);
    GrayImage grid(coarse, coarse);
    for (auto& v : grid.pixels) v = bg(rng);
    GrayImage image = resize_bilinear(grid, size, size);
    for (auto& v : image.pixels)
      v = std::min(1.0f, std::max(0.0f, v + jitter(rng)));
    GrayImage mask(size, size, 0.0f);

    // one polyline spanning the full horizontal extent, random waviness
    std::uniform_real_distribution<float> y_start(0.15f * size, 0.85f * size);
    std::uniform_real_distribution<float> y_step(-0.12f * size, 0.12f * size);
    std::uniform_int_distribution<int> width_px(1, 3);
    std::uniform_real_distribution<float> ink(0.10f, 0.20f);
    const float radius = static_cast<float>(width_px(rng)) * 0.5f;
    const float intensity = ink(rng);
    const int knots = 5;
    float prev_x = 0.0f;
    float prev_y = y_start(rng);
    for (int k = 1; k <= knots; ++k) {
      const float next_x = static_cast<float>(size - 1) * static_cast<float>(k) /
                           static_cast<float>(knots);
      float next_y = prev_y + y_step(rng);
      next_y = std::min(0.92f * size, std::max(0.08f * size, next_y));
      detail::draw_stroke(image, mask, prev_x, prev_y, next_x, next_y, radius, intensity);
      prev_x = next_x;
      prev_y = next_y;
    }

    char id[32];
    std::snprintf(id, sizeof(id), "synth_%06d", i);
    ds.samples.push_back(Sample{id, std::move(image), std::move(mask)});
  }
  detail::validate_dataset(ds, "gen_synthetic");
  return ds;
}

/// Writes <root>/images/<id>.png and <root>/masks/<id>.png.
inline void export_dataset(const Dataset& ds, const std::string& root) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root + "/images", ec);
  fs::create_directories(root + "/masks", ec);
  if (ec) throw DataError("cannot create dataset directories under " + root);
  for (const Sample& s : ds.samples) {
    save_png_gray(root + "/images/" + s.id + ".png", s.image);
    save_png_gray(root + "/masks/" + s.id + ".png", s.mask);
  }
}

/// Epoch-deterministic batch order: Fisher-Yates with mt19937(seed ^ epoch).
inline std::vector<size_t> batch_order(const Dataset& ds, unsigned seed, int epoch) {
  std::vector<size_t> idx(ds.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937 rng(seed ^ static_cast<unsigned>(epoch));
  for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  return idx;
}

/// Stacks the given samples into image/mask tensors of shape N x 1 x H x W.
inline std::pair<Tensor, Tensor> make_batch(const Dataset& ds,
                                            const std::vector<size_t>& indices) {
  if (indices.empty()) throw DataError("make_batch: empty index list");
  const GrayImage& first = ds.samples[indices[0]].image;
  const int h = first.height, w = first.width;
  const int n = static_cast<int>(indices.size());
  std::vector<float> img(static_cast<size_t>(n) * h * w);
  std::vector<float> msk(static_cast<size_t>(n) * h * w);
  for (int b = 0; b < n; ++b) {
    const Sample& s = ds.samples[indices[static_cast<size_t>(b)]];
    if (s.image.height != h || s.image.width != w)
      throw ShapeError("make_batch: mixed sample sizes in one dataset");
    std::copy(s.image.pixels.begin(), s.image.pixels.end(),
              img.begin() + static_cast<int64_t>(b) * h * w);
    std::copy(s.mask.pixels.begin(), s.mask.pixels.end(),
              msk.begin() + static_cast<int64_t>(b) * h * w);
  }
  return {Tensor::from_data({n, 1, h, w}, std::move(img)),
          Tensor::from_data({n, 1, h, w}, std::move(msk))};
}

/// Shuffled minibatches for one epoch; the final short batch is kept.
inline std::vector<std::pair<Tensor, Tensor>> batches(const Dataset& ds, int batch_size,
                                                      unsigned seed, int epoch) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::pair<Tensor, Tensor>> out;
  const std::vector<size_t> order = batch_order(ds, seed, epoch);
  for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), at + static_cast<size_t>(batch_size));
    out.push_back(make_batch(ds, std::vector<size_t>(order.begin() + static_cast<int64_t>(at),
                                                     order.begin() + static_cast<int64_t>(end))));
  }
  return out;
}

}  // namespace crackseg
