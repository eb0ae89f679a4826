#include "tinyformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace tinyformer {

namespace {

double evaluate(const LossBuilder& build) {
  Tape<double> tape;
  tape.set_grad_enabled(false);
  return build(tape).value()[0];
}

}  // namespace

GradCheckResult grad_check(const std::string& name, const std::vector<Tensor<double>*>& inputs,
                           const LossBuilder& build, const GradCheckOptions& options) {
  GradCheckResult result;
  result.name = name;

  for (auto* t : inputs) t->zero_grad();
  {
    Tape<double> tape;
    tape.backward(build(tape));
  }
  std::vector<std::vector<double>> analytic;
  for (auto* t : inputs) analytic.emplace_back(t->grad().begin(), t->grad().end());

  Rng rng(options.sample_seed);
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor<double>& t = *inputs[ti];
    std::vector<std::size_t> order(t.size());
    std::iota(order.begin(), order.end(), 0);
    if (options.max_per_tensor > 0 && order.size() > options.max_per_tensor) {
      for (std::size_t i = 0; i < options.max_per_tensor; ++i) {
        std::swap(order[i], order[i + rng.below(order.size() - i)]);
      }
      order.resize(options.max_per_tensor);
    }
    for (std::size_t idx : order) {
      const double x = t[idx];
      const double h = options.step_scale * std::max(1.0, std::abs(x));
      auto at = [&](double offset) {
        t[idx] = x + offset;
        return evaluate(build);
      };
      const double f1 = at(h) - at(-h);
      const double f2 = at(2 * h) - at(-2 * h);
      t[idx] = x;
      const double numeric = (8.0 * f1 - f2) / (12.0 * h);
      const double a = analytic[ti][idx];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.floor});
      ++result.checked;
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : INFINITY;
        std::ostringstream os;
        os << ti << '[' << idx << "]: " << a << " vs " << numeric;
        result.worst = os.str();
      }
    }
  }
  for (auto* t : inputs) t->drop_grad();
  return result;
}

}  // namespace tinyformer
