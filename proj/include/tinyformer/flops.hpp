#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tinyformer/model.hpp"

namespace tinyformer {

/// One counted layer. macs are multiply-accumulates; FLOPs = 2 * macs.
struct FlopsEntry {
  std::string module;
  std::string layer;
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
};

struct FlopsReport {
  std::vector<FlopsEntry> layers;
  /// Per-module sums, keyed by module name.
  std::map<std::string, std::uint64_t> module_macs, module_params;
  std::uint64_t total_macs = 0, total_params = 0;

  std::uint64_t flops() const { return 2 * total_macs; }
  /// Aligned per-module table followed by the counting rules.
  std::string table() const;
};

/// Closed-form accounting. Only matrix products are counted:
///   conv:      c_out * c_in * k^2 * h_out * w_out
///   linear:    rows * in * out
///   attention: 2 * T_q * T_k * d (scores plus weighted sum)
/// Normalization, activations, resampling and additions are not.
class FlopsCounter {
 public:
  void conv(const std::string& module, const std::string& layer, std::size_t c_in, std::size_t c_out,
            std::size_t k, std::size_t stride, std::size_t pad, std::size_t& h, std::size_t& w, bool bias,
            bool batch_norm);
  void linear(const std::string& module, const std::string& layer, std::size_t rows, std::size_t in,
              std::size_t out, bool bias = true);
  void attention(const std::string& module, const std::string& layer, std::size_t t_q, std::size_t t_k,
                 std::size_t d);
  void params(const std::string& module, const std::string& layer, std::uint64_t count);

  FlopsReport report() const;

 private:
  std::vector<FlopsEntry> layers_;
};

/// Analytic report of a full detector at batch 1 and cfg.image_size.
FlopsReport flops_count(const ModelConfig& cfg);

}  // namespace tinyformer
