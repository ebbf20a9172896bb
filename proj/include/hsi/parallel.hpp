#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace hsi {

/// Runs fn(begin, end) over `threads` contiguous chunks of [0, n). Each index
/// is visited exactly once; callers must only write to index-owned state.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, threads);
  if (threads == 1 || n < 2 * threads) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::jthread> workers;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    workers.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
}

}  // namespace hsi
