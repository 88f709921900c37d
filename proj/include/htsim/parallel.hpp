#pragma once

#include <cstdint>
#include <functional>

namespace htsim {

// Worker count: HTSIM_THREADS caps it, hardware concurrency is the default.
int worker_count();

// Splits [0, n) into contiguous chunks, one worker thread per chunk. The
// callable must write results into caller-owned per-index slots; callers do
// any order-sensitive reduction afterwards, in index order.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace htsim
