#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mbatf/tape.hpp"

namespace mbatf {

struct GradCheckOptions {
  double epsilon = 1e-4;
  double tolerance = 1e-3;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-2;
  // Checks at most this many elements per parameter (evenly strided); 0 = all.
  std::size_t max_elements = 0;
  // Only parameters of these roles are probed; empty = every parameter.
  std::vector<Role> roles;
  // Runs after the analytic backward pass; lets tests corrupt gradients on purpose.
  std::function<void(void*)> tamper;
};

struct ParameterCheck {
  std::string name;
  Role role = Role::kEncoder;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Elements whose +/- epsilon probes crossed a ReLU or max-pool kink.
  std::size_t excluded = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParameterCheck> params;
  double max_rel_error() const;
  bool passed() const;
};

template <typename Real>
using LossBuilder = std::function<typename Tape<Real>::Var(Tape<Real>&, ParameterStore<Real>&)>;

// Compares tape gradients with central differences (f(p+e) - f(p-e)) / 2e for every
// parameter in `params`. The store is restored bit-for-bit afterwards.
template <typename Real>
GradCheckReport finite_difference_check(const LossBuilder<Real>& build, ParameterStore<Real>& params,
                                        const GradCheckOptions& options);

// Same comparison, but the differences are taken by `probe` on a double copy of `params`
// holding the identical values. Separates the accuracy of float gradients from float
// rounding in the loss itself.
GradCheckReport finite_difference_check(const LossBuilder<float>& build, const LossBuilder<double>& probe,
                                        ParameterStore<float>& params, const GradCheckOptions& options);

}  // namespace mbatf
