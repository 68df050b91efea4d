#pragma once

#include <cstdint>
#include <vector>

#include "mbatf/metaloop.hpp"

namespace mbatf {

// Toy model for gradient checks: 8-dimensional encodings, 2-way 2-shot.
ModelConfig toy_config();

struct ObjectiveCheck {
  Objective objective;
  GradCheckReport report;
};

// Finite-difference check of every objective on a seeded synthetic episode. Each
// objective is checked against the roles it updates. Float gradients are compared with
// differences of the double-precision loss at the same parameter values.
template <typename Real>
std::vector<ObjectiveCheck> check_objectives(std::uint64_t seed, const GradCheckOptions& options);

// Step and tolerance per precision: float 1e-4 / 1e-3, double 1e-6 / 1e-5.
template <typename Real>
GradCheckOptions default_check_options();

}  // namespace mbatf
