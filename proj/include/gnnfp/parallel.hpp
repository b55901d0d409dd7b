#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace gnnfp {

/// Worker count: GNFP_THREADS if set (>= 1), else the hardware concurrency.
inline int worker_count() {
  int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("GNFP_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1) return cap;
    } catch (...) {
    }
  }
  return hw;
}

/// Runs fn(i) for i in [0, n). Work items are independent; the first
/// exception thrown by any item is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, int workers = worker_count()) {
  workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace gnnfp
