#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tinyformer/param_store.hpp"

namespace tinyformer {

/// Little-endian blob: "TFCK", version u32, count u32, then per entry
/// name length u16, name bytes, dtype u8 (0 = f32, 1 = f64), rank u8,
/// rank x u32 extents, raw element data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::uint8_t dtype = 0;
  std::vector<std::uint32_t> extents;
  std::vector<std::uint8_t> data;  // raw little-endian elements

  friend bool operator==(const CheckpointEntry&, const CheckpointEntry&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries);
/// Throws std::runtime_error on bad magic, unknown version or truncation.
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Every store entry (parameters and buffers) at rank 4, in insertion order.
template <typename T>
std::vector<CheckpointEntry> checkpoint_entries(const ParamStore<T>& store);

/// Copies entries into the store. Names and shapes must match one to one;
/// f32/f64 are converted to T.
template <typename T>
void restore_checkpoint(ParamStore<T>& store, const std::vector<CheckpointEntry>& entries);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& store);
template <typename T>
void load_checkpoint(const std::filesystem::path& path, ParamStore<T>& store);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace tinyformer
