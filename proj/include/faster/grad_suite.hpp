#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "faster/grad_check.hpp"

namespace faster {

struct GradSuiteEntry {
  std::string name;
  std::uint64_t seed = 0;
  double tolerance = 0.0;
  GradCheckReport report;
};

/// Primitive ops (checked at 1e-5) followed by whole aggregator sequences
/// (composites, checked at 1e-3).
std::vector<std::string> gradient_suite_names();

/// Runs every case whose name equals `only` (all cases when empty) for seeds
/// 0..seeds-1. ConfigError on an unknown name.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seeds = 5, const std::string& only = "");

}  // namespace faster
