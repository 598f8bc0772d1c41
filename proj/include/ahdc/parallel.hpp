#pragma once

#include <cstddef>
#include <functional>

namespace ahdc {

/// Worker cap from AHDC_THREADS (defaults to the hardware concurrency, min 1).
unsigned worker_threads();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// processed exactly once; callers write results by index so output order
/// never depends on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, unsigned threads = worker_threads());

}  // namespace ahdc
