#pragma once

#include <cstddef>
#include <functional>

namespace cull {

/// Worker count: $CULL_THREADS if set and positive, else hardware concurrency.
int thread_count();

/// Runs fn(i) for i in [0, n) on up to thread_count() threads. Results must
/// be written to per-index slots so the outcome is independent of scheduling.
/// The first exception thrown by any task is rethrown on the caller. Calls
/// made from inside a task run serially.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace cull
