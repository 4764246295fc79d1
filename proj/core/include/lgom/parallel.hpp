#pragma once

#include <cstddef>
#include <functional>

namespace lgom {

/// Worker count: min(LGOM_THREADS, hardware concurrency), at least 1.
int worker_count();

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks across
/// workers; each index is processed exactly once, so any computation whose
/// per-index results are written to disjoint locations is independent of the
/// worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Chunked variant: fn(begin, end) over disjoint ranges covering [0, n).
void parallel_for_chunks(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace lgom
