#pragma once

#include <cstddef>
#include <functional>

namespace multipruner {

/// Worker count: MP_THREADS if set (>= 1), otherwise hardware concurrency.
int worker_count();

/// Runs body(i) for i in [0, n) on up to `workers` threads (0 = worker_count()).
/// Callers write results by index so the outcome does not depend on scheduling.
/// The first exception thrown by any body is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body, int workers = 0);

}  // namespace multipruner
