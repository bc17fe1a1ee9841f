#pragma once

#include <cstddef>
#include <functional>

namespace mproto {

/// Worker count: MPROTO_THREADS when set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t thread_count();

/// Runs fn(i) for i in [0, count) on up to thread_count() threads. Callers
/// write results into per-index slots so the outcome does not depend on
/// scheduling. The first exception thrown by any task is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace mproto
