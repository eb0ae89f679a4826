#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tinyformer/tape.hpp"
#include "tinyformer/tensor.hpp"

namespace tinyformer {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<tensor index>[<element>]: analytic vs numeric"

  bool passed(double tolerance) const { return checked > 0 && max_rel_error < tolerance; }
};

/// Records a fresh forward pass on the tape and returns a scalar loss. The
/// builder must read the checked tensors through tape.leaf().
using LossBuilder = std::function<Var<double>(Tape<double>&)>;

struct GradCheckOptions {
  /// Probe step is step_scale * max(1, |x|).
  double step_scale = 1e-4;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Elements probed per tensor; 0 probes all of them.
  std::size_t max_per_tensor = 0;
  std::uint64_t sample_seed = 0;
};

/// Compares backward() against the fourth-order central difference
/// (8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h for every probed element.
GradCheckResult grad_check(const std::string& name, const std::vector<Tensor<double>*>& inputs,
                           const LossBuilder& build, const GradCheckOptions& options = {});

}  // namespace tinyformer

namespace tinyformer {

/// Aggregate over the random trials of one operation or block.
struct GradSuiteEntry {
  std::string name;
  std::size_t trials = 0;
  std::size_t failures = 0;
  GradCheckResult worst;  // the trial with the largest relative error

  bool passed() const { return trials > 0 && failures == 0; }
};

struct GradSuiteOptions {
  std::size_t trials = 10;
  double tolerance = 1e-4;
  std::uint64_t seed = 2024;
};

/// Finite-difference checks at f64 of every differentiable primitive and of
/// the composite blocks (conv block, fusion block, bi-fusion, adapter
/// pyramid, decoder layer, set loss), each on `trials` random inputs.
std::vector<GradSuiteEntry> run_gradcheck_suite(const GradSuiteOptions& options = {},
                                                const std::function<void(const GradSuiteEntry&)>& on_entry = {});

}  // namespace tinyformer
