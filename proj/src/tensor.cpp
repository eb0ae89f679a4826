#include "tinyformer/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace tinyformer {

std::size_t Shape::numel() const {
  std::size_t total = 1;
  for (std::size_t e : {n, c, h, w}) {
    if (__builtin_mul_overflow(total, e, &total)) {
      throw std::overflow_error("tensor extent product overflows: " + str());
    }
  }
  return total;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
  return os.str();
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view key) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : key) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  std::uint64_t state = base ^ h;
  return splitmix64(state);
}

namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t state = seed;
  for (auto& word : s_) word = splitmix64(state);
}

std::uint64_t Rng::next() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::truncated_normal() {
  for (;;) {
    const double z = normal();
    if (std::abs(z) <= 2.0) return z;
  }
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::below: zero bound");
  // Lemire's nearly-divisionless method with rejection.
  for (;;) {
    const unsigned __int128 m = static_cast<unsigned __int128>(next()) * bound;
    const auto low = static_cast<std::uint64_t>(m);
    if (low >= (-bound) % bound) return static_cast<std::uint64_t>(m >> 64);
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape) : shape_(shape), data_(shape.numel(), T(0)) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(data.begin(), data.end()) {
  if (data_.size() != shape_.numel()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_.str());
  }
}

template <typename T>
Tensor<T> Tensor<T>::create(Shape shape, const Init& init) {
  Tensor out(shape);
  std::visit(
      [&](const auto& kind) {
        using S = std::decay_t<decltype(kind)>;
        if constexpr (std::is_same_v<S, Zeros>) {
        } else if constexpr (std::is_same_v<S, Ones>) {
          for (auto& x : out.data_) x = T(1);
        } else if constexpr (std::is_same_v<S, Uniform>) {
          Rng rng(kind.seed);
          for (auto& x : out.data_) x = static_cast<T>(rng.uniform(kind.lo, kind.hi));
        } else if constexpr (std::is_same_v<S, Normal>) {
          Rng rng(kind.seed);
          for (auto& x : out.data_) x = static_cast<T>(kind.mean + kind.std * rng.normal());
        } else {
          if (kind.values.size() != out.data_.size()) {
            throw std::invalid_argument("literal has " + std::to_string(kind.values.size()) +
                                        " values for shape " + shape.str());
          }
          for (std::size_t i = 0; i < kind.values.size(); ++i) {
            out.data_[i] = static_cast<T>(kind.values[i]);
          }
        }
      },
      init);
  return out;
}

template <typename T>
std::span<T> Tensor<T>::ensure_grad() {
  if (!grad_allocated_) {
    grad_.assign(data_.size(), T(0));
    grad_allocated_ = true;
  }
  return grad_;
}

template <typename T>
void Tensor<T>::zero_grad() {
  grad_.assign(data_.size(), T(0));
  grad_allocated_ = true;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace tinyformer
