#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "m2f/tensor.hpp"

namespace m2f {

struct GradCheckOptions {
  double step = 1e-5;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, denominator_floor).
  double denominator_floor = 1e-3;
  // 0 checks every entry; otherwise a seeded random subset per input.
  std::size_t max_entries_per_input = 0;
  std::uint64_t seed = 7;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t entries_checked = 0;
  std::string worst_entry;

  bool passed(double tolerance) const { return max_relative_error < tolerance; }
};

// Compares reverse-mode gradients of the scalar `loss` with 64-bit central
// finite differences, perturbing `inputs` in place. `loss` must rebuild the
// graph from the current input values on every call.
GradCheckReport check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                                const GradCheckOptions& options = {});

}  // namespace m2f
