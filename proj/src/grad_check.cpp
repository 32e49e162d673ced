#include "bad/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bad {

std::string GradCheckReport::summary() const {
  std::ostringstream out;
  out << "max relative error " << max_relative_error << " (abs " << max_absolute_error << ") at input "
      << worst_input << "[" << worst_index << "] over " << checked << " entries";
  return out.str();
}

namespace {

double finite_scalar(Var v) {
  const real out = v.value().item();
  if (!std::isfinite(out)) throw NumericError("gradient_check: function value is not finite");
  return static_cast<double>(out);
}

void merge(GradCheckReport& report, std::size_t input, const Tensor& analytic, const std::vector<double>& numeric) {
  double scale = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    scale = std::max({scale, std::abs(static_cast<double>(analytic[i])), std::abs(numeric[i])});
  }
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double abs_err = std::abs(static_cast<double>(analytic[i]) - numeric[i]);
    const double rel = scale > 0 ? abs_err / scale : abs_err;
    report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_input = input;
      report.worst_index = i;
    }
  }
  report.checked += analytic.size();
}

}  // namespace

GradCheckReport gradient_check(const ScalarFunction& f, const std::vector<Tensor>& inputs, double step) {
  auto evaluate = [&](const std::vector<Tensor>& xs, std::vector<Tensor>* grads) {
    Graph g(grads != nullptr);
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(g.input(x));
    Var out = f(g, vars);
    const double value = finite_scalar(out);
    if (grads) {
      g.backward(out);
      for (const Var& v : vars) grads->push_back(g.grad(v));
    }
    return value;
  };

  std::vector<Tensor> analytic;
  evaluate(inputs, &analytic);

  GradCheckReport report;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> numeric(inputs[k].size());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const real original = probe[k][i];
      probe[k][i] = original + static_cast<real>(step);
      const double up = evaluate(probe, nullptr);
      probe[k][i] = original - static_cast<real>(step);
      const double down = evaluate(probe, nullptr);
      probe[k][i] = original;
      numeric[i] = (up - down) / (2 * step);
    }
    merge(report, k, analytic[k], numeric);
  }
  return report;
}

GradCheckReport gradient_check_parameters(const std::function<Var(Graph&)>& f, std::span<Parameter* const> params,
                                          double step) {
  for (Parameter* p : params) {
    p->grad = Tensor(p->value.shape());
  }
  {
    Graph g;
    Var out = f(g);
    finite_scalar(out);
    g.backward(out);
  }
  auto evaluate = [&] {
    Graph g(false);
    return finite_scalar(f(g));
  };

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    std::vector<double> numeric(p.value.size());
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const real original = p.value[i];
      p.value[i] = original + static_cast<real>(step);
      const double up = evaluate();
      p.value[i] = original - static_cast<real>(step);
      const double down = evaluate();
      p.value[i] = original;
      numeric[i] = (up - down) / (2 * step);
    }
    merge(report, k, p.grad, numeric);
  }
  return report;
}

}  // namespace bad
