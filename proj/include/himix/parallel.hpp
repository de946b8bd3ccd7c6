#pragma once

#include <cstddef>
#include <functional>

namespace himix {

/// Number of worker threads to use when the caller passes 0.
unsigned default_threads();

/// Runs body(i) for i in [0, n) on up to `threads` workers (0 = default).
/// Work items must be independent; the first exception is rethrown.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body);

}  // namespace himix
