#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace wkam {

namespace detail {
inline unsigned& worker_setting() {
  static unsigned workers = 0;  // 0 means hardware_concurrency
  return workers;
}
}  // namespace detail

/// Number of worker threads used by row-parallel loops. Results never depend on it.
inline unsigned worker_count() {
  unsigned w = detail::worker_setting();
  if (w == 0) w = std::max(1u, std::thread::hardware_concurrency());
  return w;
}

inline void set_worker_count(unsigned workers) { detail::worker_setting() = workers; }

/// Calls body(begin, end) on disjoint contiguous chunks of [0, n).
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  const std::size_t workers = std::min<std::size_t>(worker_count(), n);
  if (workers <= 1 || n < 64) {
    body(std::size_t{0}, n);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    std::size_t b = w * chunk;
    std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
}

}  // namespace wkam
