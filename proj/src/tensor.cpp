#include "ldaqu/tensor.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>

namespace ldaqu {

namespace {

int initial_num_threads() {
  if (const char* env = std::getenv("LDAQU_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

std::atomic<int>& thread_count() {
  static std::atomic<int> count{initial_num_threads()};
  return count;
}

}  // namespace

void set_num_threads(int n) { thread_count().store(n < 1 ? 1 : n); }

int num_threads() { return thread_count().load(); }

void parallel_for(std::int64_t count, const std::function<void(std::int64_t)>& fn) {
  const int workers = num_threads();
  if (workers <= 1 || count < 2 * workers) {
    for (std::int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::int64_t chunk = (count + workers - 1) / workers;
  for (int t = 0; t < workers; ++t) {
    const std::int64_t begin = t * chunk;
    const std::int64_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] {
      for (std::int64_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace ldaqu
