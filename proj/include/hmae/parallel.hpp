#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace hmae {

/// Worker cap: HMAE_THREADS when set, otherwise hardware concurrency.
inline unsigned worker_count() {
  if (const char* env = std::getenv("HMAE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? hw : 1;
}

/// Runs fn(i) for i in [0, count). Items are independent; results must be
/// written into per-index slots so the output order is deterministic.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = std::min<std::size_t>(worker_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace hmae
