#pragma once

#include <cstddef>
#include <functional>

namespace essm {

/// Worker-thread cap: EEG_SSM_THREADS when set, else hardware concurrency.
std::size_t thread_cap();

/// Runs f(begin, end) over [0, n) split into contiguous chunks across worker
/// threads. Chunks never overlap, so any function writing disjoint outputs is
/// deterministic regardless of the thread count. Falls back to a single
/// inline call when n < min_parallel or only one thread is allowed.
void parallel_chunks(std::size_t n, std::size_t min_parallel,
                     const std::function<void(std::size_t, std::size_t)>& f);

}  // namespace essm
