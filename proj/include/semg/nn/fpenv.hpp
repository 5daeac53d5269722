#pragma once

#if defined(__SSE2__)
#include <pmmintrin.h>
#include <xmmintrin.h>
#endif

namespace semg::nn {

/// Flushes subnormal results and inputs to zero on every OpenMP thread while
/// alive. Once logits saturate, gradients decay into the subnormal range where
/// x86 arithmetic is orders of magnitude slower. No-op off x86.
class FlushDenormals {
 public:
  FlushDenormals() {
#if defined(__SSE2__)
    saved_ = _mm_getcsr();
#pragma omp parallel
    _mm_setcsr(_mm_getcsr() | kBits);
#endif
  }
  ~FlushDenormals() {
#if defined(__SSE2__)
    const unsigned restore = saved_ & kBits;
#pragma omp parallel
    _mm_setcsr((_mm_getcsr() & ~kBits) | restore);
#endif
  }
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

 private:
#if defined(__SSE2__)
  static constexpr unsigned kBits = _MM_FLUSH_ZERO_ON | _MM_DENORMALS_ZERO_ON;
  unsigned saved_ = 0;
#endif
};

}  // namespace semg::nn
