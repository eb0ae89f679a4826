#include "tinyformer/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tinyformer {

namespace fs = std::filesystem;

namespace {

void write_netpbm(const fs::path& path, const Image& img, const char* magic, std::size_t channels) {
  if (img.channels != channels || img.pixels.size() != img.width * img.height * channels) {
    throw std::invalid_argument("netpbm: image buffer does not match its header");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << magic << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// Reads the next header integer, skipping whitespace and # comments.
std::size_t header_int(std::istream& in, const fs::path& path) {
  int c = in.peek();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      in.get();
    }
    c = in.peek();
  }
  std::size_t v = 0;
  if (!(in >> v)) throw std::runtime_error("malformed netpbm header in " + path.string());
  return v;
}

Image read_netpbm(const fs::path& path, const char* magic, std::size_t channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string m;
  in >> m;
  if (m != magic) throw std::runtime_error(path.string() + ": expected " + magic + " image, found '" + m + "'");
  Image img;
  img.channels = channels;
  img.width = header_int(in, path);
  img.height = header_int(in, path);
  if (header_int(in, path) != 255) throw std::runtime_error(path.string() + ": only maxval 255 is supported");
  in.get();  // the single whitespace byte before the raster
  img.pixels.resize(img.width * img.height * channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw std::runtime_error(path.string() + ": truncated raster");
  }
  return img;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Class k: color k % 8, shape k % 3 (square, disc, triangle).
constexpr std::array<std::array<double, 3>, 8> kPalette = {{
    {0.92, 0.16, 0.10},
    {0.12, 0.80, 0.22},
    {0.16, 0.32, 0.96},
    {0.95, 0.86, 0.12},
    {0.85, 0.20, 0.85},
    {0.10, 0.85, 0.88},
    {0.98, 0.98, 0.98},
    {0.05, 0.05, 0.05},
}};

bool covers(std::size_t shape, double u, double v) {
  // (u, v): pixel center relative to the box, in [0, 1]^2.
  switch (shape) {
    case 0: return true;
    case 1: return (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5) <= 0.25 + 1e-9;
    default: return std::abs(u - 0.5) <= 0.5 * v + 1e-9;  // apex at the top
  }
}

void render_background(Image& img, Rng& rng) {
  const std::size_t cell = 16;
  const std::size_t gw = img.width / cell + 2, gh = img.height / cell + 2;
  std::vector<double> lattice(gw * gh * 3);
  for (auto& v : lattice) v = rng.uniform(0.25, 0.55);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double fx = static_cast<double>(x) / cell, fy = static_cast<double>(y) / cell;
      const std::size_t ix = static_cast<std::size_t>(fx), iy = static_cast<std::size_t>(fy);
      const double tx = smoothstep(fx - ix), ty = smoothstep(fy - iy);
      for (std::size_t c = 0; c < 3; ++c) {
        auto at = [&](std::size_t gx, std::size_t gy) { return lattice[(gy * gw + gx) * 3 + c]; };
        double v = (1 - ty) * ((1 - tx) * at(ix, iy) + tx * at(ix + 1, iy)) +
                   ty * ((1 - tx) * at(ix, iy + 1) + tx * at(ix + 1, iy + 1));
        v += rng.uniform(-0.03, 0.03);
        img.pixels[(y * img.width + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255));
      }
    }
}

}  // namespace

void write_ppm(const fs::path& path, const Image& img) { write_netpbm(path, img, "P6", 3); }
Image read_ppm(const fs::path& path) { return read_netpbm(path, "P6", 3); }
void write_pgm(const fs::path& path, const Image& img) { write_netpbm(path, img, "P5", 1); }
Image read_pgm(const fs::path& path) { return read_netpbm(path, "P5", 1); }

void SynthConfig::validate() const {
  if (extent == 0 || extent % 32 != 0) throw std::invalid_argument("synth: extent must be a positive multiple of 32");
  if (min_objects > max_objects) throw std::invalid_argument("synth: min_objects > max_objects");
  if (num_classes == 0 || num_classes > kPalette.size()) {
    throw std::invalid_argument("synth: num_classes must be in [1, 8]");
  }
  for (const SizeBucket& b : {small, medium, large}) {
    if (b.min_px == 0 || b.min_px > b.max_px || b.max_px > extent) {
      throw std::invalid_argument("synth: size bucket out of range");
    }
  }
  if (mix_small < 0 || mix_medium < 0 || mix_large < 0 || mix_small + mix_medium + mix_large <= 0) {
    throw std::invalid_argument("synth: mixture weights must be non-negative with a positive sum");
  }
  if (max_iou < 0 || max_iou > 1) throw std::invalid_argument("synth: max_iou must lie in [0, 1]");
}

double SynthConfig::small_area() const {
  const double side = static_cast<double>(extent) / 10.0;
  return side * side;
}

double SynthConfig::medium_area() const {
  const double side = 3.0 * static_cast<double>(extent) / 10.0;
  return side * side;
}

Dataset synth_generate(const SynthConfig& cfg, std::size_t n_images, std::size_t first_index) {
  cfg.validate();
  Dataset ds;
  ds.extent = cfg.extent;
  ds.num_classes = cfg.num_classes;
  ds.small_area = cfg.small_area();
  ds.medium_area = cfg.medium_area();
  ds.seed = cfg.seed;
  const double total_mix = cfg.mix_small + cfg.mix_medium + cfg.mix_large;
  const double E = static_cast<double>(cfg.extent);

  for (std::size_t i = first_index; i < first_index + n_images; ++i) {
    Rng rng(derive_seed(cfg.seed, "image" + std::to_string(i)));
    Sample s;
    s.image.width = s.image.height = cfg.extent;
    s.image.pixels.resize(cfg.extent * cfg.extent * 3);
    render_background(s.image, rng);

    const std::size_t count = cfg.min_objects + rng.below(cfg.max_objects - cfg.min_objects + 1);
    for (std::size_t k = 0; k < count; ++k) {
      const double pick = rng.uniform() * total_mix;
      const SizeBucket& b = pick < cfg.mix_small ? cfg.small : pick < cfg.mix_small + cfg.mix_medium ? cfg.medium : cfg.large;
      const std::size_t cls = rng.below(cfg.num_classes);
      bool placed = false;
      for (std::size_t attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
        const std::size_t w = b.min_px + rng.below(b.max_px - b.min_px + 1);
        const std::size_t h = b.min_px + rng.below(b.max_px - b.min_px + 1);
        const std::size_t x0 = rng.below(cfg.extent - w + 1), y0 = rng.below(cfg.extent - h + 1);
        const Box box{(x0 + 0.5 * w) / E, (y0 + 0.5 * h) / E, w / E, h / E};
        const bool clear = std::all_of(s.objects.begin(), s.objects.end(),
                                       [&](const GtObject& o) { return iou(o.box, box) <= cfg.max_iou; });
        if (!clear) continue;
        placed = true;
        const auto& color = kPalette[cls % kPalette.size()];
        const double gain = rng.uniform(0.9, 1.1);
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            if (!covers(cls % 3, (x + 0.5) / w, (y + 0.5) / h)) continue;
            auto* px = &s.image.pixels[((y0 + y) * cfg.extent + x0 + x) * 3];
            for (std::size_t c = 0; c < 3; ++c) {
              px[c] = static_cast<std::uint8_t>(std::lround(std::clamp(color[c] * gain, 0.0, 1.0) * 255));
            }
          }
        s.objects.push_back({cls, box});
      }
      if (!placed) ++ds.dropped;
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir / "images");
  std::ofstream ann(dir / "annotations.txt");
  if (!ann) throw std::runtime_error("cannot write " + (dir / "annotations.txt").string());
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "# tinyformer-dataset version=1 extent=%zu classes=%zu small_area=%.6g medium_area=%.6g seed=%llu "
                "images=%zu\n",
                ds.extent, ds.num_classes, ds.small_area, ds.medium_area,
                static_cast<unsigned long long>(ds.seed), ds.samples.size());
  ann << buf;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%06zu.ppm", i);
    write_ppm(dir / "images" / buf, ds.samples[i].image);
    for (const auto& o : ds.samples[i].objects) {
      std::snprintf(buf, sizeof buf, "%zu %zu %.6g %.6g %.6g %.6g\n", i, o.class_id, o.box.cx, o.box.cy, o.box.w,
                    o.box.h);
      ann << buf;
    }
  }
  if (!ann) throw std::runtime_error("write failed: annotations.txt");
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path ann_path = dir / "annotations.txt";
  std::ifstream ann(ann_path);
  if (!ann) throw std::runtime_error("cannot open " + ann_path.string());
  std::string header;
  std::getline(ann, header);
  std::istringstream hs(header);
  std::string hash, tag;
  hs >> hash >> tag;
  if (hash != "#" || tag != "tinyformer-dataset") throw std::runtime_error(ann_path.string() + ": missing manifest header");
  Dataset ds;
  std::size_t images = 0;
  bool have_images = false;
  for (std::string kv; hs >> kv;) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::runtime_error("manifest: malformed field '" + kv + "'");
    const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
    if (key == "version" && val != "1") throw std::runtime_error("manifest: unsupported version " + val);
    if (key == "extent") ds.extent = std::stoul(val);
    if (key == "classes") ds.num_classes = std::stoul(val);
    if (key == "small_area") ds.small_area = std::stod(val);
    if (key == "medium_area") ds.medium_area = std::stod(val);
    if (key == "seed") ds.seed = std::stoull(val);
    if (key == "images") images = std::stoul(val), have_images = true;
  }
  if (!have_images) throw std::runtime_error("manifest: missing image count");
  ds.samples.resize(images);
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(ann, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t id = 0;
    GtObject o;
    if (!(ls >> id >> o.class_id >> o.box.cx >> o.box.cy >> o.box.w >> o.box.h) || id >= images ||
        o.class_id >= ds.num_classes) {
      throw std::runtime_error(ann_path.string() + ":" + std::to_string(lineno) + ": malformed annotation");
    }
    validate_box(o.box);
    ds.samples[id].objects.push_back(o);
  }
  char name[32];
  for (std::size_t i = 0; i < images; ++i) {
    std::snprintf(name, sizeof name, "%06zu.ppm", i);
    ds.samples[i].image = read_ppm(dir / "images" / name);
    if (ds.samples[i].image.width != ds.extent || ds.samples[i].image.height != ds.extent) {
      throw std::runtime_error(std::string(name) + ": extent differs from the manifest");
    }
  }
  return ds;
}

template <typename T>
Tensor<T> batch_images(const Dataset& ds, std::span<const std::size_t> indices) {
  const std::size_t e = ds.extent, plane = e * e;
  Tensor<T> out(Shape{indices.size(), 3, e, e});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Image& img = ds.samples.at(indices[b]).image;
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < 3; ++c) {
        out[(b * 3 + c) * plane + p] = static_cast<T>(img.pixels[p * 3 + c] / 127.5 - 1.0);
      }
  }
  return out;
}

template Tensor<float> batch_images<float>(const Dataset&, std::span<const std::size_t>);
template Tensor<double> batch_images<double>(const Dataset&, std::span<const std::size_t>);

}  // namespace tinyformer
