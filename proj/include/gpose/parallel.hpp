#pragma once

#include <functional>

namespace gpose {

/// Worker count from GIGAPOSE_THREADS, else the hardware concurrency (>= 1).
int default_thread_count();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
/// thrown by any task is rethrown on the caller after all workers join.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace gpose
