#include "tinyformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace tinyformer {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <typename U>
  U get() {
    U v;
    std::memcpy(&v, take(sizeof(U)), sizeof(U));
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw std::runtime_error("checkpoint: truncated data");
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(std::uint8_t dtype) {
  if (dtype == 0) return 4;
  if (dtype == 1) return 8;
  throw std::runtime_error("checkpoint: unknown dtype code " + std::to_string(dtype));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::vector<std::uint8_t> out{'T', 'F', 'C', 'K'};
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xFFFF) throw std::invalid_argument("checkpoint: name too long: " + e.name);
    if (e.extents.size() > 0xFF) throw std::invalid_argument("checkpoint: rank too large");
    std::size_t count = 1;
    for (auto x : e.extents) count *= x;
    if (e.data.size() != count * dtype_size(e.dtype)) throw std::invalid_argument("checkpoint: data size mismatch");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put<std::uint8_t>(out, e.dtype);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.extents.size()));
    for (auto x : e.extents) put<std::uint32_t>(out, x);
    out.insert(out.end(), e.data.begin(), e.data.end());
  }
  return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const auto* magic = r.take(4);
  if (std::memcmp(magic, "TFCK", 4) != 0) throw std::runtime_error("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<CheckpointEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = r.get<std::uint16_t>();
    const auto* name = r.take(len);
    e.name.assign(name, name + len);
    e.dtype = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint8_t>();
    std::size_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      e.extents.push_back(r.get<std::uint32_t>());
      n *= e.extents.back();
    }
    const std::size_t nbytes = n * dtype_size(e.dtype);
    const auto* data = r.take(nbytes);
    e.data.assign(data, data + nbytes);
    entries.push_back(std::move(e));
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return entries;
}

template <typename T>
std::vector<CheckpointEntry> checkpoint_entries(const ParamStore<T>& store) {
  std::vector<CheckpointEntry> out;
  for (const auto& p : store.entries()) {
    CheckpointEntry e;
    e.name = p.name;
    e.dtype = std::is_same_v<T, float> ? 0 : 1;
    const Shape s = p.value.shape();
    for (std::size_t x : {s.n, s.c, s.h, s.w}) {
      if (x > 0xFFFFFFFFu) throw std::invalid_argument("checkpoint: extent too large");
      e.extents.push_back(static_cast<std::uint32_t>(x));
    }
    const auto* raw = reinterpret_cast<const std::uint8_t*>(p.value.data().data());
    e.data.assign(raw, raw + p.value.size() * sizeof(T));
    out.push_back(std::move(e));
  }
  return out;
}

template <typename T>
void restore_checkpoint(ParamStore<T>& store, const std::vector<CheckpointEntry>& entries) {
  if (entries.size() != store.size()) {
    throw std::runtime_error("checkpoint: holds " + std::to_string(entries.size()) + " tensors, model has " +
                             std::to_string(store.size()));
  }
  for (const auto& e : entries) {
    if (!store.contains(e.name)) throw std::runtime_error("checkpoint: unexpected tensor " + e.name);
    Tensor<T>& t = store.get(e.name);
    if (e.extents.size() > 4) throw std::runtime_error("checkpoint: rank > 4 for " + e.name);
    std::size_t ext[4] = {1, 1, 1, 1};
    std::copy(e.extents.begin(), e.extents.end(), ext + (4 - e.extents.size()));
    const Shape s{ext[0], ext[1], ext[2], ext[3]};
    if (s != t.shape()) {
      throw std::runtime_error("checkpoint: " + e.name + " has shape " + s.str() + ", model expects " +
                               t.shape().str());
    }
    auto dst = t.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (e.dtype == 0) {
        float v;
        std::memcpy(&v, e.data.data() + 4 * i, 4);
        dst[i] = static_cast<T>(v);
      } else {
        double v;
        std::memcpy(&v, e.data.data() + 8 * i, 8);
        dst[i] = static_cast<T>(v);
      }
    }
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& store) {
  write_file_bytes(path, encode_checkpoint(checkpoint_entries(store)));
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, ParamStore<T>& store) {
  restore_checkpoint(store, decode_checkpoint(read_file_bytes(path)));
}

template std::vector<CheckpointEntry> checkpoint_entries(const ParamStore<float>&);
template std::vector<CheckpointEntry> checkpoint_entries(const ParamStore<double>&);
template void restore_checkpoint(ParamStore<float>&, const std::vector<CheckpointEntry>&);
template void restore_checkpoint(ParamStore<double>&, const std::vector<CheckpointEntry>&);
template void save_checkpoint(const std::filesystem::path&, const ParamStore<float>&);
template void save_checkpoint(const std::filesystem::path&, const ParamStore<double>&);
template void load_checkpoint(const std::filesystem::path&, ParamStore<float>&);
template void load_checkpoint(const std::filesystem::path&, ParamStore<double>&);

}  // namespace tinyformer
