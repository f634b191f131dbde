#pragma once

#include <cstddef>
#include <functional>

namespace ritseg {

// Persistent worker pool for intra-op parallelism. RITSEG_THREADS caps the
// pool size (default: hardware concurrency).
//
// Determinism contract: parallel_for only splits index ranges. Every index
// writes disjoint outputs and performs its own accumulations in a fixed
// order, so results are bit-identical for any thread count.

int thread_count();
void set_thread_count(int n);

// Invokes fn(begin, end) on contiguous chunks of [0, n), possibly from
// multiple threads. Blocks until all chunks are done.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

} // namespace ritseg
