#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "faster/graph.hpp"

namespace faster {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_location;  // "input i, element j"
  bool passed = false;
};

/// Scalar-valued function of tracked 64-bit inputs, built on the given graph.
using ScalarFn = std::function<Var<double>(Graph<double>&, std::span<const Var<double>>)>;

/// Compares tape gradients against central differences
/// (f(x+eps) - f(x-eps)) / 2eps for every element of every input.
/// Relative error is |a - n| / max(|a|, |n|, denom_floor).
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double epsilon = 1e-6,
                           double tolerance = 1e-5, double denom_floor = 1e-3);

}  // namespace faster
