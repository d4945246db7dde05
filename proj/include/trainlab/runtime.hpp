// Copyright 2026 The trainlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace trainlab {

/// Keeps large activation buffers on the heap free lists instead of mmap, so
/// repeated training steps reuse pages rather than fault in fresh ones.
inline void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace trainlab
