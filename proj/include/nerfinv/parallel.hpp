#pragma once

#include <cstddef>
#include <functional>

namespace nerfinv {

// Resolves a user thread count: values <= 0 mean "all available cores".
int resolve_threads(int requested);

using ChunkFn = std::function<void(std::size_t chunk, std::size_t begin, std::size_t end)>;

// Runs fn over consecutive chunks of `chunk_size` items covering [0, n) using
// up to `threads` workers. The partition depends only on n and chunk_size,
// never on the thread count, so callers that reduce per-chunk results in
// chunk order get bit-identical output regardless of parallelism.
void parallel_for(std::size_t n, int threads, const ChunkFn& fn, std::size_t chunk_size = 1);

}  // namespace nerfinv
