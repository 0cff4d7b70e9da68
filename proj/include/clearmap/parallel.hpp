#pragma once

#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace clearmap {

// Worker count: CLEARMAP_THREADS when set to a positive integer, otherwise the
// hardware concurrency. 1 gives the deterministic single-threaded mode.
inline std::size_t thread_count() {
  if (const char* env = std::getenv("CLEARMAP_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// Runs fn(worker, begin, end) over contiguous chunks of [0, n). Chunk
// boundaries depend only on n and the worker count. If workers throw, the
// exception of the lowest-numbered worker is rethrown.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers == 0) workers = 1;
  if (workers > n) workers = n == 0 ? 1 : n;
  if (workers == 1) {
    fn(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = n * w / workers;
    const std::size_t end = n * (w + 1) / workers;
    pool.emplace_back([&, w, begin, end] {
      try {
        fn(w, begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  parallel_chunks(n, thread_count(), [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
  });
}

}  // namespace clearmap
