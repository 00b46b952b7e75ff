#ifndef GRES2NET_PARALLEL_HPP
#define GRES2NET_PARALLEL_HPP

#include <cstdint>
#include <functional>

namespace gres2net {

// Worker count for embarrassingly-parallel loops; capped by the
// GATED_RES2NET_THREADS environment variable when set.
int worker_count();

// Runs fn(0..n-1) across workers. Items must be independent; exceptions are
// rethrown on the calling thread after all workers join.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace gres2net

#endif  // GRES2NET_PARALLEL_HPP
