#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <new>
#include <vector>

namespace tinyformer {

/// Extents of a rank-4 NCHW array.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  /// Product of the extents. Throws std::overflow_error when it does not fit.
  std::size_t numel() const;
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// xoshiro256** seeded through splitmix64. Constants follow the reference
/// implementation by Blackman and Vigna, so sequences are portable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (cosine branch only, one draw per call).
  double normal();
  /// Standard normal truncated to [-2, 2] by resampling.
  double truncated_normal();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

 private:
  std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Seed derived from a base seed and a string key (FNV-1a then splitmix64).
/// Parameters named identically receive identical initial values regardless of
/// construction order.
std::uint64_t derive_seed(std::uint64_t base, std::string_view key);

struct Zeros {};
struct Ones {};
struct Uniform {
  std::uint64_t seed = 0;
  double lo = 0.0;
  double hi = 1.0;
};
struct Normal {
  std::uint64_t seed = 0;
  double mean = 0.0;
  double std = 1.0;
};
struct Literal {
  std::vector<double> values;
};
using Init = std::variant<Zeros, Ones, Uniform, Normal, Literal>;

/// 64-byte aligned storage. Eigen peels unaligned heads off its vectorized
/// reductions, so the summation order (and the low bits of the result) would
/// otherwise depend on where malloc happened to place a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major NCHW array with an optional gradient buffer.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> data);

  static Tensor create(Shape shape, const Init& init);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  AlignedVector<T>& storage() { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  bool has_grad() const { return grad_allocated_; }
  /// Allocates a zero gradient if none exists; returns it.
  std::span<T> ensure_grad();
  std::span<T> grad() { return grad_; }
  std::span<const T> grad() const { return grad_; }
  void zero_grad();
  void drop_grad() {
    grad_.clear();
    grad_allocated_ = false;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  Shape shape_{};
  AlignedVector<T> data_;
  AlignedVector<T> grad_;
  bool grad_allocated_ = false;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace tinyformer
