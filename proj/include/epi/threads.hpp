#pragma once

#include <functional>

namespace epi::threads {

// Global worker-parallelism cap (1 = fully sequential). Set once from the
// CLI / test entry point before any work is scheduled.
void set_max_threads(int n);
int max_threads();

// Runs body(i) for i in [0, n). Work is partitioned deterministically, so
// results written to index i are identical regardless of the thread count.
void parallel_for(int n, const std::function<void(int)>& body);

}  // namespace epi::threads
