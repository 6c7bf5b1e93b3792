#pragma once

#include <cstddef>
#include <functional>

namespace fkbridge {

/// Number of worker threads used by the compute modules (>= 1).
/// Defaults to std::thread::hardware_concurrency().
std::size_t worker_count() noexcept;
void set_worker_count(std::size_t n) noexcept;

/// Splits [0, count) into contiguous chunks, one per worker, and runs
/// body(begin, end) on each. Blocks until every chunk is done; the first
/// exception thrown by a chunk is rethrown.
void parallel_for(std::size_t count,
                  const std::function<void(std::size_t, std::size_t)>& body);

/// Pairwise (cascade) summation in index order. The result depends only on
/// the values and their order, never on how they were produced.
double pairwise_sum(const double* data, std::size_t n) noexcept;

}  // namespace fkbridge
