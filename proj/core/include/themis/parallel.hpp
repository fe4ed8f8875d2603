#pragma once

#include <cstddef>
#include <functional>

namespace themis {

/// Worker count from THEMIS_WORKERS, else hardware concurrency (at least 1).
/// Results never depend on it: all randomness comes from per-item sub-streams
/// and outputs are written to per-item slots.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to `workers` threads (0 = worker_count()).
/// The first exception thrown by any item is rethrown after all threads join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t workers = 0);

}  // namespace themis
