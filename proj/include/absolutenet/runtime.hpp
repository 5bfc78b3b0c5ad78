#pragma once

#if defined(__GLIBC__) || defined(__linux__)
#include <malloc.h>
#endif

namespace absnet {

/// Keep large tensor blocks on the reusable heap instead of per-allocation
/// mmap; training allocates tens of megabytes of activations per batch and
/// the page-fault churn otherwise dominates the arithmetic. Call once at
/// program start.
inline void tune_allocator() {
#if defined(__GLIBC__) || defined(__linux__)
    mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
}

}  // namespace absnet
