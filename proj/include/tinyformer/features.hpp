#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tinyformer/data.hpp"
#include "tinyformer/model.hpp"

namespace tinyformer {

/// Channel mean of sample `batch` of an NCHW map, min-max scaled to 0..255.
/// A constant map becomes uniform mid-gray (128).
template <typename T>
Image channel_mean_image(const Tensor<T>& map, std::size_t batch = 0);

/// Runs one inference pass on `image` and writes <dir>/<prefix>_P<level>.pgm
/// for each level. Neck outputs are used where they exist; level 2 falls
/// back to the adapter's F2. Returns the written paths.
template <typename T>
std::vector<std::filesystem::path> dump_features(const Detector<T>& model, const Image& image,
                                                 const std::vector<int>& levels, const std::filesystem::path& dir,
                                                 const std::string& prefix = "features");

}  // namespace tinyformer
