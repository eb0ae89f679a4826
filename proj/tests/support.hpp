#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "tinyformer/param_store.hpp"
#include "tinyformer/tape.hpp"
#include "tinyformer/tensor.hpp"

namespace tinyformer::testing {

inline Tensor<double> random_tensor(Shape s, std::uint64_t seed, double std = 1.0) {
  return Tensor<double>::create(s, Normal{seed, 0.0, std});
}

template <typename A, typename B>
double linf(const A& a, const B& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

inline bool bit_equal(const Tensor<double>& a, const Tensor<double>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Sets every entry whose name satisfies `pick` to zero.
inline void zero_params(ParamStore<double>& store, const std::function<bool(const std::string&)>& pick) {
  for (auto& e : store.entries()) {
    if (pick(e.name)) std::fill(e.value.data().begin(), e.value.data().end(), 0.0);
  }
}

inline bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

}  // namespace tinyformer::testing
