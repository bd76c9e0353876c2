#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace mlq::detail {

inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Run body(i) for i in [0, count). `make_body` is invoked once per worker so
/// each thread owns its workspace; indices are claimed dynamically. Results
/// must be written to per-index slots, which keeps the outcome independent of
/// the worker count and claim order.
template <typename MakeBody>
void parallel_run(std::int64_t count, int workers, MakeBody&& make_body) {
  workers = resolve_workers(workers);
  if (static_cast<std::int64_t>(workers) > count) workers = static_cast<int>(count);
  if (workers <= 1) {
    auto body = make_body();
    for (std::int64_t i = 0; i < count; ++i) body(i);
    return;
  }

  std::atomic<std::int64_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto thread_main = [&]() {
    try {
      auto body = make_body();
      for (;;) {
        const std::int64_t i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= count) break;
        body(i);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
      next.store(count, std::memory_order_relaxed);  // drain remaining work
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(thread_main);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace mlq::detail
