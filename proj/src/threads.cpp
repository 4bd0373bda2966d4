#include "epi/threads.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>
#include <thread>
#include <vector>

namespace epi::threads {

namespace {
int g_max_threads = 1;
}

void set_max_threads(int n) {
  if (n < 1) throw std::invalid_argument("set_max_threads: need n >= 1");
  g_max_threads = n;
}

int max_threads() { return g_max_threads; }

void parallel_for(int n, const std::function<void(int)>& body) {
  const int workers = std::min(g_max_threads, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace epi::threads
