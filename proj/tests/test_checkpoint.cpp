#include <filesystem>

#include "doctest.h"
#include "support.hpp"
#include "tinyformer/checkpoint.hpp"
#include "tinyformer/model.hpp"

using namespace tinyformer;
using namespace tinyformer::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "tinyformer_test_ckpt";
  fs::create_directories(dir);
  return dir / name;
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = std::uint8_t(v >> (8 * i));
}

}  // namespace

TEST_CASE("header layout") {
  CheckpointEntry e{"w", 1, {1, 1, 1, 2}, std::vector<std::uint8_t>(16, 0xAB)};
  const auto b = encode_checkpoint({e});
  REQUIRE(b.size() == 4 + 4 + 4 + 2 + 1 + 1 + 1 + 16 + 16);
  CHECK(std::string(b.begin(), b.begin() + 4) == "TFCK");
  CHECK(b[4] == kCheckpointVersion);
  CHECK(b[8] == 1);
  CHECK(b[12] == 1);  // name length, little-endian
  CHECK(b[14] == 'w');
  CHECK(b[15] == 1);  // f64
  CHECK(b[16] == 4);  // rank
  CHECK(decode_checkpoint(b) == std::vector<CheckpointEntry>{e});
}

TEST_CASE("save, load, save is byte-identical and restores every value") {
  Detector<float> a(ModelConfig::preset_config(Preset::Toy), 5);
  Detector<float> b(ModelConfig::preset_config(Preset::Toy), 6);
  const fs::path p1 = scratch("a.tfck"), p2 = scratch("b.tfck");
  save_checkpoint(p1, a.params());
  load_checkpoint(p1, b.params());
  save_checkpoint(p2, b.params());
  CHECK(read_file_bytes(p1) == read_file_bytes(p2));
  for (std::size_t i = 0; i < a.params().size(); ++i)
    CHECK(linf(a.params().entries()[i].value, b.params().entries()[i].value) == 0.0);
}

TEST_CASE("f32 checkpoints load into f64 stores") {
  Detector<float> a(ModelConfig::preset_config(Preset::Toy), 5);
  Detector<double> b(ModelConfig::preset_config(Preset::Toy), 9);
  restore_checkpoint(b.params(), checkpoint_entries(a.params()));
  for (std::size_t i = 0; i < a.params().size(); ++i)
    CHECK(linf(a.params().entries()[i].value, b.params().entries()[i].value) == 0.0);
}

TEST_CASE("corrupt blobs are rejected") {
  Detector<float> a(ModelConfig::preset_config(Preset::Toy), 5);
  const auto good = encode_checkpoint(checkpoint_entries(a.params()));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), std::runtime_error);
  auto bad_version = good;
  put_u32(bad_version, 4, kCheckpointVersion + 1);
  CHECK_THROWS_AS(decode_checkpoint(bad_version), std::runtime_error);
  for (std::size_t cut : {std::size_t{3}, std::size_t{11}, good.size() / 2, good.size() - 1}) {
    CHECK_THROWS_AS(decode_checkpoint(std::vector<std::uint8_t>(good.begin(), good.begin() + cut)),
                    std::runtime_error);
  }
  auto trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), std::runtime_error);
}

TEST_CASE("architecture mismatches are rejected") {
  Detector<float> toy(ModelConfig::preset_config(Preset::Toy), 5);
  ModelConfig other = ModelConfig::preset_config(Preset::Toy);
  other.neck = NeckMode::Baseline3Scale;
  other.ssa_variant = SsaVariant::F3Only;
  Detector<float> base(other, 5);
  CHECK_THROWS(restore_checkpoint(base.params(), checkpoint_entries(toy.params())));
  auto entries = checkpoint_entries(toy.params());
  entries[0].extents[3] += 1;
  CHECK_THROWS(restore_checkpoint(toy.params(), entries));
  CHECK_THROWS(load_checkpoint(scratch("missing.tfck"), toy.params()));
}
