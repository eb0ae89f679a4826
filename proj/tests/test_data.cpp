#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "doctest.h"
#include "tinyformer/checkpoint.hpp"
#include "tinyformer/data.hpp"

using namespace tinyformer;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tinyformer_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SynthConfig synth(std::uint64_t seed = 1) {
  SynthConfig c;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("generation is a pure function of config and seed") {
  const Dataset a = synth_generate(synth(1), 4), b = synth_generate(synth(1), 4), c = synth_generate(synth(2), 4);
  REQUIRE(a.samples.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.samples[i].image == b.samples[i].image);
    REQUIRE(a.samples[i].objects.size() == b.samples[i].objects.size());
    for (std::size_t j = 0; j < a.samples[i].objects.size(); ++j)
      CHECK(a.samples[i].objects[j].box == b.samples[i].objects[j].box);
  }
  CHECK_FALSE(a.samples[0].image == c.samples[0].image);
  // Image i does not depend on how many images precede it in the batch.
  const Dataset tail = synth_generate(synth(1), 2, 2);
  CHECK(tail.samples[0].image == a.samples[2].image);
}

TEST_CASE("zero objects per image gives empty annotation lists") {
  SynthConfig cfg = synth();
  cfg.min_objects = cfg.max_objects = 0;
  const Dataset ds = synth_generate(cfg, 5);
  for (const auto& s : ds.samples) CHECK(s.objects.empty());
}

TEST_CASE("boxes are valid, inside the image and pairwise below the overlap cap") {
  SynthConfig cfg = synth(7);
  cfg.max_objects = 10;
  const Dataset ds = synth_generate(cfg, 200);
  std::size_t objects = 0, small = 0;
  for (const auto& s : ds.samples) {
    CHECK(s.image.width == 64);
    CHECK(s.image.pixels.size() == 64 * 64 * 3);
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      const Box& b = s.objects[i].box;
      CHECK(0.0 <= b.x1());
      CHECK(b.x1() < b.x2());
      CHECK(b.x2() <= 1.0);
      CHECK(0.0 <= b.y1());
      CHECK(b.y1() < b.y2());
      CHECK(b.y2() <= 1.0);
      CHECK(s.objects[i].class_id < cfg.num_classes);
      for (std::size_t j = 0; j < i; ++j) CHECK(iou(b, s.objects[j].box) <= cfg.max_iou);
      ++objects;
      small += b.area() * 64 * 64 < cfg.small_area();
    }
  }
  CHECK(cfg.small_area() == doctest::Approx(6.4 * 6.4));
  CHECK(cfg.medium_area() == doctest::Approx(19.2 * 19.2));
  CHECK(double(small) / double(objects) >= 0.55);
}

TEST_CASE("unsatisfiable placement drops objects instead of looping") {
  SynthConfig cfg = synth(3);
  cfg.min_objects = cfg.max_objects = 40;
  cfg.mix_small = 0.0;
  cfg.mix_medium = 0.0;
  cfg.mix_large = 1.0;
  cfg.max_iou = 0.0;
  cfg.max_attempts = 50;
  const Dataset ds = synth_generate(cfg, 1);
  CHECK(ds.dropped > 0);
  CHECK(ds.samples[0].objects.size() + ds.dropped == 40);
}

TEST_CASE("PPM and PGM round trips") {
  const fs::path dir = scratch("pnm");
  Image rgb{5, 3, 3, {}};
  for (std::size_t i = 0; i < 45; ++i) rgb.pixels.push_back(std::uint8_t(i * 5));
  write_ppm(dir / "a.ppm", rgb);
  CHECK(read_ppm(dir / "a.ppm") == rgb);
  const auto bytes = read_file_bytes(dir / "a.ppm");
  CHECK(std::string(bytes.begin(), bytes.begin() + 2) == "P6");

  Image gray{4, 2, 1, {0, 10, 20, 30, 40, 50, 60, 255}};
  write_pgm(dir / "g.pgm", gray);
  CHECK(read_pgm(dir / "g.pgm") == gray);
  CHECK_THROWS(read_ppm(dir / "g.pgm"));
  CHECK_THROWS(read_ppm(dir / "missing.ppm"));
}

TEST_CASE("dataset save and load round trip") {
  const fs::path dir = scratch("ds");
  const Dataset ds = synth_generate(synth(5), 12);
  save_dataset(dir, ds);
  const Dataset back = load_dataset(dir);
  CHECK(back.extent == ds.extent);
  CHECK(back.num_classes == ds.num_classes);
  CHECK(back.small_area == doctest::Approx(ds.small_area));
  CHECK(back.seed == ds.seed);
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].image == ds.samples[i].image);
    REQUIRE(back.samples[i].objects.size() == ds.samples[i].objects.size());
    for (std::size_t j = 0; j < ds.samples[i].objects.size(); ++j) {
      const Box &a = ds.samples[i].objects[j].box, &b = back.samples[i].objects[j].box;
      CHECK(back.samples[i].objects[j].class_id == ds.samples[i].objects[j].class_id);
      CHECK(std::abs(a.cx - b.cx) <= 5e-6 * a.cx);
      CHECK(std::abs(a.w - b.w) <= 5e-6 * a.w);
    }
  }
  // Saving what was loaded reproduces the files.
  const fs::path dir2 = scratch("ds2");
  save_dataset(dir2, back);
  CHECK(read_file_bytes(dir / "annotations.txt") == read_file_bytes(dir2 / "annotations.txt"));
}

TEST_CASE("annotation lines carry six significant digits under a manifest header") {
  const fs::path dir = scratch("ann");
  Dataset ds;
  ds.small_area = 40.96;
  ds.medium_area = 368.64;
  Sample s;
  s.image = Image{64, 64, 3, std::vector<std::uint8_t>(64 * 64 * 3, 7)};
  s.objects.push_back({2, {1.0 / 3.0, 0.123456789, 0.0001234567, 0.5}});
  ds.samples.push_back(s);
  save_dataset(dir, ds);
  std::ifstream in(dir / "annotations.txt");
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  CHECK(header.rfind("# tinyformer-dataset", 0) == 0);
  CHECK(header.find("extent=64") != std::string::npos);
  CHECK(header.find("small_area=40.96") != std::string::npos);
  CHECK(line == "0 2 0.333333 0.123457 0.000123457 0.5");
}

TEST_CASE("malformed datasets are rejected") {
  const fs::path dir = scratch("bad");
  std::ofstream(dir / "annotations.txt") << "no header here\n";
  CHECK_THROWS(load_dataset(dir));
  std::ofstream(dir / "annotations.txt") << "# tinyformer-dataset version=2 extent=64 classes=3 images=0\n";
  CHECK_THROWS(load_dataset(dir));
}

TEST_CASE("batched images are scaled to [-1, 1]") {
  const Dataset ds = synth_generate(synth(), 3);
  const std::size_t idx[] = {2, 0};
  const auto t = batch_images<double>(ds, idx);
  CHECK(t.shape() == Shape{2, 3, 64, 64});
  const auto& px = ds.samples[2].image.pixels;
  CHECK(t.at(0, 1, 3, 5) == doctest::Approx(px[(3 * 64 + 5) * 3 + 1] / 127.5 - 1.0));
  for (double v : t.data()) REQUIRE((v >= -1.0 && v <= 1.0));
}
