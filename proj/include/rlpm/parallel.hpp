#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace rlpm {

/// Worker cap from RLPM_THREADS (0 = sequential). Unset means one worker per
/// hardware thread.
inline std::size_t thread_count_from_env() {
  const char* v = std::getenv("RLPM_THREADS");
  if (v == nullptr || *v == '\0') return std::max(1u, std::thread::hardware_concurrency());
  try {
    return static_cast<std::size_t>(std::stoul(v));
  } catch (const std::exception&) {
    return 0;
  }
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work is claimed
/// dynamically, so callers must write results into per-index slots. The first
/// exception thrown by any task is rethrown on the caller's thread.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t count = std::min(threads, n);
  pool.reserve(count);
  for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace rlpm
