#include "faster/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace faster {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor<double>>& inputs) {
  Graph<double> g;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.emplace_back(t, false);
  const Var<double> out = f(g, vars);
  if (out.value().size() != 1) throw GraphError("grad_check: function is not scalar-valued");
  return out.value()[0];
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double epsilon,
                           double tolerance, double denom_floor) {
  Graph<double> g;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.emplace_back(t, true);
  const Var<double> out = f(g, vars);
  g.backward(out);

  GradCheckReport report;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double> analytic = vars[i].has_grad() ? vars[i].grad() : Tensor<double>(inputs[i].shape());
    for (Index j = 0; j < inputs[i].size(); ++j) {
      const double original = probe[i][j];
      probe[i][j] = original + epsilon;
      const double plus = evaluate(f, probe);
      probe[i][j] = original - epsilon;
      const double minus = evaluate(f, probe);
      probe[i][j] = original;

      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double abs_err = std::abs(analytic[j] - numeric);
      const double rel_err = abs_err / std::max({std::abs(analytic[j]), std::abs(numeric), denom_floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel_err > report.max_rel_error || report.worst_location.empty()) {
        report.max_rel_error = std::max(report.max_rel_error, rel_err);
        report.worst_location = "input " + std::to_string(i) + ", element " + std::to_string(j);
      }
    }
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace faster
