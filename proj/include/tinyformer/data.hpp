#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tinyformer/head.hpp"
#include "tinyformer/tensor.hpp"

namespace tinyformer {

/// 8-bit interleaved RGB (or single-channel gray), row-major.
struct Image {
  std::size_t width = 0, height = 0, channels = 3;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const Image&, const Image&) = default;
};

void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image& img);
Image read_pgm(const std::filesystem::path& path);

struct SizeBucket {
  std::size_t min_px = 0, max_px = 0;
};

struct SynthConfig {
  std::size_t extent = 64;
  std::size_t min_objects = 1, max_objects = 6;
  std::size_t num_classes = 3;
  SizeBucket small{2, 6}, medium{8, 16}, large{20, 32};
  double mix_small = 0.6, mix_medium = 0.25, mix_large = 0.15;
  double max_iou = 0.3;
  std::size_t max_attempts = 1000;
  std::uint64_t seed = 1;

  void validate() const;
  /// Pixel-area bucket bounds: small below (extent/10)^2, medium below
  /// (3 extent/10)^2 (COCO's 32:96 side ratio).
  double small_area() const;
  double medium_area() const;
};

struct Sample {
  Image image;
  std::vector<GtObject> objects;
};

struct Dataset {
  std::size_t extent = 64;
  std::size_t num_classes = 3;
  double small_area = 0.0, medium_area = 0.0;
  std::uint64_t seed = 0;
  std::vector<Sample> samples;
  /// Objects abandoned after max_attempts rejections.
  std::size_t dropped = 0;
};

/// Image i depends only on (cfg, i): its generator is seeded from
/// derive_seed(cfg.seed, "image<i>").
Dataset synth_generate(const SynthConfig& cfg, std::size_t n_images, std::size_t first_index = 0);

/// Layout: <dir>/annotations.txt plus <dir>/images/<id>.ppm (6-digit ids).
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

/// Stacks the selected samples into an (n, 3, h, w) tensor scaled to [-1, 1].
template <typename T>
Tensor<T> batch_images(const Dataset& ds, std::span<const std::size_t> indices);

}  // namespace tinyformer
