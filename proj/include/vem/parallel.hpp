#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace vem {

/// Runs fn(i) for i in [0, n_tasks) on up to `workers` threads.
///
/// Tasks are independent units whose shape never depends on the worker count,
/// so anything computed per task is bit-identical however it is scheduled.
/// The first exception thrown by a task is rethrown on the calling thread.
template <class Fn>
void parallel_for(std::size_t n_tasks, int workers, Fn&& fn) {
  const std::size_t n_threads =
      std::min<std::size_t>(n_tasks, static_cast<std::size_t>(std::max(1, workers)));
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_tasks) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n_tasks);
        return;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(n_threads - 1);
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(body);
    body();
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace vem
