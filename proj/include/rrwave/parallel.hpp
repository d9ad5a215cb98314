#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace rrwave {

// Worker count: RRWAVE_THREADS env, else hardware concurrency.
inline int default_threads() {
  static const int n = [] {
    if (const char* env = std::getenv("RRWAVE_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
  }();
  return n;
}

// Static range split across freshly spawned threads. Every output element is
// produced by exactly one invocation, so results do not depend on the thread
// count. Re-entrant (nested calls just oversubscribe).
inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& chunk_fn,
                         int nthreads = 0) {
  if (n <= 0) return;
  if (nthreads <= 0) nthreads = default_threads();
  nthreads = static_cast<int>(std::min<int64_t>(nthreads, n));
  if (nthreads == 1) {
    chunk_fn(0, n);
    return;
  }
  const int64_t chunk = (n + nthreads - 1) / nthreads;
  std::vector<std::thread> workers;
  workers.reserve(static_cast<size_t>(nthreads) - 1);
  for (int t = 1; t < nthreads; ++t) {
    int64_t lo = t * chunk, hi = std::min<int64_t>(n, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([&chunk_fn, lo, hi] { chunk_fn(lo, hi); });
  }
  chunk_fn(0, std::min<int64_t>(n, chunk));
  for (auto& w : workers) w.join();
}

}  // namespace rrwave
