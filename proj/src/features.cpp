#include "tinyformer/features.hpp"

#include <algorithm>
#include <cmath>

namespace tinyformer {

template <typename T>
Image channel_mean_image(const Tensor<T>& map, std::size_t batch) {
  const Shape s = map.shape();
  if (batch >= s.n || s.c == 0) throw std::invalid_argument("feature dump: empty map or batch out of range");
  Image img;
  img.width = s.w;
  img.height = s.h;
  img.channels = 1;
  std::vector<double> mean(s.h * s.w, 0.0);
  for (std::size_t c = 0; c < s.c; ++c) {
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) mean[y * s.w + x] += static_cast<double>(map.at(batch, c, y, x));
    }
  }
  for (double& v : mean) v /= static_cast<double>(s.c);
  const auto [lo, hi] = std::minmax_element(mean.begin(), mean.end());
  const double range = *hi - *lo;
  img.pixels.resize(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double u = range > 0 ? (mean[i] - *lo) / range : 128.0 / 255.0;
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0));
  }
  return img;
}

template <typename T>
std::vector<std::filesystem::path> dump_features(const Detector<T>& model, const Image& image,
                                                 const std::vector<int>& levels, const std::filesystem::path& dir,
                                                 const std::string& prefix) {
  const std::size_t e = model.config().image_size;
  if (image.channels != 3 || image.width != e || image.height != e) {
    throw std::invalid_argument("feature dump: image must be " + std::to_string(e) + "x" + std::to_string(e) + " RGB");
  }
  Dataset one;
  one.extent = e;
  one.samples.push_back({image, {}});
  const std::size_t idx[] = {0};
  Tape<T> tape;
  tape.set_grad_enabled(false);
  Context<T> ctx{tape, false};
  auto fr = model.forward(ctx, tape.constant(batch_images<T>(one, idx)));

  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (int level : levels) {
    const FeaturePyramid<T>* src = fr.neck.has(level) ? &fr.neck : fr.pyramid.has(level) ? &fr.pyramid : nullptr;
    if (!src) throw std::invalid_argument("feature dump: model has no level " + std::to_string(level));
    auto path = dir / (prefix + "_P" + std::to_string(level) + ".pgm");
    write_pgm(path, channel_mean_image(src->at(level).value()));
    written.push_back(path);
  }
  return written;
}

template Image channel_mean_image(const Tensor<float>&, std::size_t);
template Image channel_mean_image(const Tensor<double>&, std::size_t);
template std::vector<std::filesystem::path> dump_features(const Detector<float>&, const Image&,
                                                          const std::vector<int>&, const std::filesystem::path&,
                                                          const std::string&);
template std::vector<std::filesystem::path> dump_features(const Detector<double>&, const Image&,
                                                          const std::vector<int>&, const std::filesystem::path&,
                                                          const std::string&);

}  // namespace tinyformer
