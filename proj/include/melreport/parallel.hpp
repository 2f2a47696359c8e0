#pragma once

#include <cstddef>
#include <functional>

namespace melreport {

// Worker count: MELREPORT_THREADS if set (>= 1), else hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Work items must be independent; results are
// identical to the sequential loop whatever the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace melreport
