#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace rephop {

namespace detail {
inline std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{0};  // 0 = not set yet
  return cap;
}
}  // namespace detail

inline void set_max_threads(int n) { detail::thread_cap().store(n > 0 ? n : 1); }

// Worker cap: set_max_threads() wins, then RH_THREADS, then the hardware.
inline int max_threads() {
  int cap = detail::thread_cap().load();
  if (cap > 0) return cap;
  if (const char* env = std::getenv("RH_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

namespace detail {
inline thread_local int parallel_depth = 0;
}

// Runs body(i) for i in [0, n). Work items are claimed through a shared
// counter; callers must write results to per-index slots so the outcome is
// independent of the schedule. Nested calls run inline on the worker that
// issued them. The first exception is rethrown on the caller.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  if (n == 0) return;
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(max_threads()), n);
  if (workers <= 1 || detail::parallel_depth > 0) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::atomic_flag error_claimed = ATOMIC_FLAG_INIT;
  auto run = [&] {
    ++detail::parallel_depth;
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load(std::memory_order_relaxed)) break;
      try {
        body(i);
      } catch (...) {
        if (!error_claimed.test_and_set()) error = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
        break;
      }
    }
    --detail::parallel_depth;
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace rephop
