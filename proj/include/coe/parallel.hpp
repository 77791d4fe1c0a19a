#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace coe {

/// Worker count from COE_THREADS, falling back to the hardware concurrency.
int default_thread_count();

/// Runs fn(i) for i in [0, n) over contiguous blocks. Work items must write
/// to disjoint outputs; callers do any reduction afterwards in index order so
/// results never depend on the thread count. The exception thrown for the
/// lowest index block is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, int threads = default_thread_count()) {
  const std::size_t workers =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t block = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t begin = w * block;
      const std::size_t end = std::min(n, begin + block);
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace coe
