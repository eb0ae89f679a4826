#include "tinyformer/param_store.hpp"

#include <cmath>
#include <stdexcept>

namespace tinyformer {

template <typename T>
Tensor<T>& ParamStore<T>::add(const std::string& name, Tensor<T> value, bool trainable) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  ParamEntry<T> entry;
  entry.name = name;
  entry.trainable = trainable;
  if (trainable) {
    entry.m.assign(value.size(), T(0));
    entry.v.assign(value.size(), T(0));
  }
  entry.value = std::move(value);
  index_.emplace(name, entries_.size());
  entries_.push_back(std::move(entry));
  return entries_.back().value;
}

template <typename T>
Tensor<T>& ParamStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second].value;
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second].value;
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& e : entries_)
    if (e.trainable) total += e.value.size();
  return total;
}

template <typename T>
void ParamStore<T>::zero_grads() {
  for (auto& e : entries_)
    if (e.trainable) e.value.zero_grad();
}

template <typename T>
std::size_t ParamStore<T>::assign_from(const ParamStore& other) {
  std::size_t copied = 0;
  for (auto& e : entries_) {
    auto it = other.index_.find(e.name);
    if (it == other.index_.end()) continue;
    const auto& src = other.entries_[it->second].value;
    if (src.shape() != e.value.shape()) continue;
    std::copy(src.data().begin(), src.data().end(), e.value.data().begin());
    ++copied;
  }
  return copied;
}

template <typename T>
void adamw_step(ParamStore<T>& store, const AdamWOptions& opt) {
  for (const auto& e : store.entries()) {
    if (e.trainable && !e.value.has_grad()) {
      throw std::logic_error("adamw_step: parameter '" + e.name + "' has no gradient");
    }
  }
  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    ++e.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(e.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(e.step));
    const double decay = 1.0 - opt.lr * opt.weight_decay;
    auto w = e.value.data();
    auto g = e.value.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double m = opt.beta1 * e.m[i] + (1.0 - opt.beta1) * gi;
      const double v = opt.beta2 * e.v[i] + (1.0 - opt.beta2) * gi * gi;
      e.m[i] = static_cast<T>(m);
      e.v[i] = static_cast<T>(v);
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      w[i] = static_cast<T>(w[i] * decay - opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps));
    }
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template void adamw_step(ParamStore<float>&, const AdamWOptions&);
template void adamw_step(ParamStore<double>&, const AdamWOptions&);

}  // namespace tinyformer
