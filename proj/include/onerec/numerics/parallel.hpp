#pragma once

#include <functional>

namespace onerec {

// Runs fn(0..n-1), striped across up to `threads` workers. Each index must
// touch only its own output slot; results are then independent of the
// thread count.
void parallelFor(int n, int threads, const std::function<void(int)>& fn);

}  // namespace onerec
