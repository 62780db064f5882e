#pragma once

#include <functional>

#include "faster/tensor.hpp"

namespace faster {

/// FASTER_LAB_THREADS when set to a positive integer, else the number of
/// logical cores (at least 1).
Index worker_threads();

/// Runs fn(0) .. fn(n-1) on up to worker_threads() threads. Each index is
/// handled exactly once; results must not depend on which thread runs it.
void parallel_for(Index n, const std::function<void(Index)>& fn);

}  // namespace faster
