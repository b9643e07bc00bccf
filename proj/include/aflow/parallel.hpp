#ifndef AFLOW_PARALLEL_HPP_
#define AFLOW_PARALLEL_HPP_

#include <cstdint>
#include <functional>

namespace aflow {

// Worker threads used by the compute kernels. Parallelism is only ever over
// disjoint output rows, and every output element is computed with the same
// per-element summation order as the serial path, so results are bit-identical
// for any thread count.
void set_thread_count(int n);
int thread_count();

// Runs fn(begin, end) over a static partition of [0, n). `min_per_thread`
// keeps tiny loops serial; pass 0 to always split.
void parallel_for(std::int64_t n, std::int64_t min_per_thread, const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace aflow

#endif  // AFLOW_PARALLEL_HPP_
