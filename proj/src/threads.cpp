#include "faster/threads.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace faster {

Index worker_threads() {
  if (const char* env = std::getenv("FASTER_LAB_THREADS")) {
    try {
      const long value = std::stol(env);
      if (value > 0) return value;
    } catch (const std::exception&) {
    }
  }
  return std::max<Index>(1, static_cast<Index>(std::thread::hardware_concurrency()));
}

void parallel_for(Index n, const std::function<void(Index)>& fn) {
  const Index threads = std::min(worker_threads(), n);
  if (threads <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (Index w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (Index i = w; i < n; i += threads) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace faster
