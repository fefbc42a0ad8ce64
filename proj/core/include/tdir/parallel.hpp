#pragma once

#include <cstddef>
#include <functional>

namespace tdir {

/// Runs fn(i) for i in [0, count) on up to `jobs` threads. Work items are
/// claimed in index order; results must be written to per-index slots. The
/// first exception thrown by any item is rethrown after all threads join.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace tdir
