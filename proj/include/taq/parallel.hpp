#pragma once

#include <cstddef>
#include <functional>

namespace taq {

// Worker cap from TAQ_THREADS (unset or 0 means hardware concurrency).
std::size_t parallel_threads();

// Runs fn(i) for i in [0, n) on up to parallel_threads() threads. Callers
// write results by index, so output order never depends on scheduling. The
// first exception (lowest index) is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace taq
