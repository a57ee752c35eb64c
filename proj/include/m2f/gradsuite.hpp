#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "m2f/gradcheck.hpp"

namespace m2f {

struct GradSuiteEntry {
  std::string name;
  GradCheckReport report;
};

// Finite-difference checks covering every differentiable operation and loss,
// each model layer, and the full dialog model at k = 3, C = 4, widths <= 16.
// Each check contracts the output with a fixed random tensor.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed = 1);

}  // namespace m2f
