#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bad/autodiff.hpp"

namespace bad {

struct GradCheckReport {
  // Per input tensor: max_i |analytic_i - numeric_i| / max(max|analytic|, max|numeric|).
  double max_relative_error = 0;
  double max_absolute_error = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;

  bool passed(double tolerance) const { return max_relative_error <= tolerance; }
  std::string summary() const;
};

using ScalarFunction = std::function<Var(Graph&, std::span<const Var>)>;

// Compares reverse-mode gradients of a scalar function of `inputs` against
// central finite differences with step `step`. Throws NumericError if the
// function value is non-finite.
GradCheckReport gradient_check(const ScalarFunction& f, const std::vector<Tensor>& inputs, double step = 1e-5);

// Same check with respect to parameters captured by `f`.
GradCheckReport gradient_check_parameters(const std::function<Var(Graph&)>& f, std::span<Parameter* const> params,
                                          double step = 1e-5);

}  // namespace bad
