#pragma once

#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace hetroute {

/// Worker count, capped by the HETROUTE_THREADS environment variable.
inline unsigned worker_count() {
  unsigned n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  if (const char* env = std::getenv("HETROUTE_THREADS")) {
    long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1 && static_cast<unsigned>(cap) < n) n = static_cast<unsigned>(cap);
  }
  return n;
}

/// Runs fn(0..count-1) on a small worker pool. Each index is processed by
/// exactly one worker; results must be written to per-index slots.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn, unsigned workers = worker_count()) {
  if (count == 0) return;
  if (workers <= 1 || count == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto body = [&] {
    for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::thread> pool;
  unsigned spawn = static_cast<unsigned>(std::min<std::size_t>(workers, count));
  pool.reserve(spawn);
  for (unsigned w = 0; w < spawn; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
}

}  // namespace hetroute
