#pragma once

#include <cstddef>
#include <functional>

namespace parobs {

/// Worker count from PAROBS_THREADS, else the hardware concurrency (at least 1).
std::size_t thread_count();

/// Runs fn(0..n-1) on up to thread_count() threads. The first exception thrown by
/// any call is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace parobs
