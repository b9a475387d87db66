#pragma once

namespace giv {

// Keeps large tensor buffers on the heap instead of fresh mmap regions.
// Training allocates and frees the same multi-megabyte arrays every step;
// with glibc's default thresholds each one becomes an mmap/munmap pair and
// the page faults dominate run time. No-op on other C libraries.
void tune_allocator();

}  // namespace giv
