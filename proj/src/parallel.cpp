#include "essm/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace essm {

std::size_t thread_cap() {
  static const std::size_t cap = [] {
    if (const char* env = std::getenv("EEG_SSM_THREADS")) {
      const long v = std::atol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<std::size_t>(hw ? hw : 1);
  }();
  return cap;
}

void parallel_chunks(std::size_t n, std::size_t min_parallel,
                     const std::function<void(std::size_t, std::size_t)>& f) {
  if (n == 0) return;
  const std::size_t workers = std::min(thread_cap(), n);
  if (workers <= 1 || n < min_parallel) {
    f(0, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end, w] {
      try {
        f(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace essm
