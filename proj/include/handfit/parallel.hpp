#pragma once

#include <cstddef>
#include <functional>

namespace handfit {

/// Worker count: HANDFIT_THREADS if set (>= 1), else the hardware
/// concurrency.
int worker_count();

/// Calls fn(i) for i in [0, n) on up to worker_count() threads using a
/// static contiguous partition. The first exception thrown is rethrown
/// after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace handfit
