#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "tinyformer/tensor.hpp"

namespace tinyformer {

/// Named parameter with its AdamW moment buffers.
template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> value;
  std::vector<T> m;
  std::vector<T> v;
  std::uint64_t step = 0;
  /// Buffers (BatchNorm running statistics) are persisted but never optimized.
  bool trainable = true;
};

/// Insertion-ordered parameter registry. References returned by add() stay
/// valid for the lifetime of the store.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  /// Throws std::invalid_argument on a duplicate name.
  Tensor<T>& add(const std::string& name, Tensor<T> value, bool trainable = true);

  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::deque<ParamEntry<T>>& entries() { return entries_; }
  const std::deque<ParamEntry<T>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Number of trainable scalars.
  std::size_t parameter_count() const;

  /// Allocates (or resets) zero gradients on every trainable entry.
  void zero_grads();

  /// Copies values of every entry whose name and shape match one in `other`.
  /// Returns the number of entries copied.
  std::size_t assign_from(const ParamStore& other);

 private:
  std::deque<ParamEntry<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double eps = 1e-8;
};

/// Decoupled-weight-decay Adam step over every trainable entry:
///   w <- w (1 - lr wd);  w <- w - lr m_hat / (sqrt(v_hat) + eps).
/// Gradients are read, not cleared. Throws std::logic_error when a trainable
/// entry has no gradient buffer.
template <typename T>
void adamw_step(ParamStore<T>& store, const AdamWOptions& opt);

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace tinyformer
