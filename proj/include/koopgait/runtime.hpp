#pragma once

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace koopgait {

/// Training allocates and frees many large temporaries per minibatch. With
/// glibc's default thresholds each one becomes an mmap/munmap pair, which
/// dominates the run time, so executables raise both thresholds at startup.
inline void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace koopgait
