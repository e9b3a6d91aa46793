#pragma once

#include <cstdint>
#include <thread>
#include <vector>

namespace mpnet {

/// Worker count for intra-primitive parallelism. 1 = sequential (default).
/// Work is split into disjoint index blocks and every per-index reduction
/// keeps its sequential order, so results are bitwise identical for any
/// thread count.
int thread_count();
void set_thread_count(int n);

namespace detail {
inline int& thread_count_ref() {
  static int n = 1;
  return n;
}
}  // namespace detail

inline int thread_count() { return detail::thread_count_ref(); }

inline void set_thread_count(int n) { detail::thread_count_ref() = n < 1 ? 1 : n; }

/// Runs fn(i) for i in [0, count). Each index is handled by exactly one
/// worker; fn must only write state owned by index i.
template <class Fn>
void parallel_for(int64_t count, Fn&& fn) {
  const int workers = thread_count();
  if (workers <= 1 || count <= 1) {
    for (int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const int used = static_cast<int>(workers < count ? workers : count);
  std::vector<std::thread> pool;
  pool.reserve(used - 1);
  auto run_block = [&fn, count, used](int worker) {
    const int64_t lo = count * worker / used;
    const int64_t hi = count * (worker + 1) / used;
    for (int64_t i = lo; i < hi; ++i) fn(i);
  };
  for (int w = 1; w < used; ++w) pool.emplace_back(run_block, w);
  run_block(0);
  for (auto& t : pool) t.join();
}

}  // namespace mpnet
