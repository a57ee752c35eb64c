#include "m2f/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace m2f {

GradCheckReport check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                                const GradCheckOptions& options) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(loss());

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());

    std::vector<std::size_t> entries(t.numel());
    std::iota(entries.begin(), entries.end(), 0);
    if (options.max_entries_per_input && entries.size() > options.max_entries_per_input) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_input);
    }

    auto data = t.data();
    for (std::size_t i : entries) {
      const double saved = data[i];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard no_grad;
        data[i] = saved + options.step;
        plus = loss().item();
        data[i] = saved - options.step;
        minus = loss().item();
      }
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double denom =
          std::max({std::abs(analytic[i]), std::abs(numeric), options.denominator_floor});
      const double err = std::abs(analytic[i] - numeric) / denom;
      ++report.entries_checked;
      if (!(err <= report.max_relative_error)) {
        report.max_relative_error = std::isnan(err) ? INFINITY : err;
        report.worst_entry = "input " + std::to_string(k) + " entry " + std::to_string(i) +
                             ": analytic " + std::to_string(analytic[i]) + " numeric " +
                             std::to_string(numeric);
      }
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return report;
}

}  // namespace m2f
