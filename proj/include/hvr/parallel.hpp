#pragma once

#include <cstddef>
#include <functional>

namespace hvr {

/// Worker count: set_thread_count() if called, else HVR_THREADS, else 1 per core.
unsigned thread_count();
void set_thread_count(unsigned n);  // 0 restores the environment default

/// Runs body(i) for i in [0, n). Each index is processed exactly once; results
/// must be written to index-addressed storage so output is order independent.
/// The exception from the lowest failing index is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace hvr
