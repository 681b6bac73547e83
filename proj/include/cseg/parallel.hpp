#pragma once

#include <cstddef>
#include <functional>

namespace cseg {

// Worker count used by ops that split work across batch elements.
// Reference mode pins it to 1; that path is the determinism baseline.
void set_num_threads(std::size_t n);
std::size_t num_threads();

void set_reference_mode(bool on);
bool reference_mode();

// Splits [0, n) into contiguous chunks (at most num_threads()) and runs
// fn(chunk, begin, end) for each. Chunk 0 runs on the calling thread.
// Returns the number of chunks used.
std::size_t parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

// Number of chunks parallel_chunks would use for n items.
std::size_t chunk_count(std::size_t n);

}  // namespace cseg
