#include "mbatf/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mbatf {

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& p : params) worst = std::max(worst, p.max_rel_error);
  return worst;
}

bool GradCheckReport::passed() const {
  return std::all_of(params.begin(), params.end(), [](const ParameterCheck& p) { return p.passed; });
}

namespace {

struct Probe {
  double loss;
  std::uint64_t signature;
};

template <typename Real>
Probe evaluate(const LossBuilder<Real>& build, ParameterStore<Real>& params) {
  Tape<Real> tape;
  auto loss = build(tape, params);
  return {static_cast<double>(tape.scalar(loss)), tape.branch_signature()};
}

template <typename To, typename From>
ParameterStore<To> convert(const ParameterStore<From>& params) {
  ParameterStore<To> out;
  for (const auto& e : params.entries()) {
    const auto v = e.tensor.values();
    out.add(e.name, e.role, Tensor<To>(e.tensor.shape(), std::vector<To>(v.begin(), v.end())));
  }
  return out;
}

// Analytic gradients come from `build` on `params`; differences from `probe` on `probed`,
// which holds the same values in ProbeReal.
template <typename Real, typename ProbeReal>
GradCheckReport compare(const LossBuilder<Real>& build, const LossBuilder<ProbeReal>& probe,
                        ParameterStore<Real>& params, ParameterStore<ProbeReal>& probed,
                        const GradCheckOptions& options) {
  ParameterStore<Real> analytic;
  {
    Tape<Real> tape;
    auto loss = build(tape, params);
    tape.backward(loss);
    if (options.tamper) options.tamper(&params);
    analytic = params;
  }
  const std::uint64_t base_signature = evaluate(probe, probed).signature;

  GradCheckReport report;
  for (std::size_t e = 0; e < probed.entries().size(); ++e) {
    auto& entry = probed.entries()[e];
    if (!options.roles.empty() &&
        std::find(options.roles.begin(), options.roles.end(), entry.role) == options.roles.end()) {
      continue;
    }
    const auto grad = analytic.entries()[e].tensor.grad();
    ParameterCheck check{entry.name, entry.role};
    auto values = entry.tensor.values();
    const std::size_t n = values.size();
    const std::size_t stride =
        (options.max_elements == 0 || n <= options.max_elements) ? 1 : (n + options.max_elements - 1) / options.max_elements;
    for (std::size_t i = 0; i < n; i += stride) {
      const ProbeReal saved = values[i];
      const ProbeReal hi = static_cast<ProbeReal>(saved + options.epsilon);
      const ProbeReal lo = static_cast<ProbeReal>(saved - options.epsilon);
      values[i] = hi;
      const auto plus = evaluate(probe, probed);
      values[i] = lo;
      const auto minus = evaluate(probe, probed);
      values[i] = saved;
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++check.excluded;
        continue;
      }
      // Divide by the step actually taken after rounding.
      const double numeric = (plus.loss - minus.loss) / (static_cast<double>(hi) - static_cast<double>(lo));
      const double a = static_cast<double>(grad[i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      check.max_rel_error = std::max(check.max_rel_error, std::abs(a - numeric) / denom);
      ++check.checked;
    }
    check.passed = check.max_rel_error <= options.tolerance;
    report.params.push_back(std::move(check));
  }
  for (auto& entry : params.entries()) entry.tensor.clear_grad();
  return report;
}

}  // namespace

template <typename Real>
GradCheckReport finite_difference_check(const LossBuilder<Real>& build, ParameterStore<Real>& params,
                                        const GradCheckOptions& options) {
  return compare(build, build, params, params, options);
}

GradCheckReport finite_difference_check(const LossBuilder<float>& build, const LossBuilder<double>& probe,
                                        ParameterStore<float>& params, const GradCheckOptions& options) {
  auto probed = convert<double>(params);
  return compare(build, probe, params, probed, options);
}

template GradCheckReport finite_difference_check<float>(const LossBuilder<float>&, ParameterStore<float>&,
                                                        const GradCheckOptions&);
template GradCheckReport finite_difference_check<double>(const LossBuilder<double>&, ParameterStore<double>&,
                                                         const GradCheckOptions&);

}  // namespace mbatf
