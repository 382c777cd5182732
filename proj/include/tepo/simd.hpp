#pragma once

// Data-parallel inner loops with a scalar reference and ISA-specific
// variants. The active table is picked once at startup from the CPU
// features; TEPO_SIMD=scalar forces the reference path.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace tepo::simd {

struct KernelTable {
  const char* name;
  /// sum_i x[i]*y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  /// y[i] += a*x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  /// x[i] = max(x[i], 0)
  void (*relu)(double* x, std::size_t n);
  /// g[i] = 0 where act[i] <= 0
  void (*relu_backward)(const double* act, double* g, std::size_t n);
  /// number of nonzero bytes
  std::size_t (*count_nonzero)(const std::uint8_t* m, std::size_t n);
  /// number of positions where both bytes are nonzero
  std::size_t (*count_both)(const std::uint8_t* a, const std::uint8_t* b, std::size_t n);
  /// out[i] = p[i] > 0.5f
  void (*threshold_half)(const float* p, std::uint8_t* out, std::size_t n);
};

const KernelTable& scalar_kernels() noexcept;
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_kernels() noexcept;
#endif
#if defined(__aarch64__)
const KernelTable& neon_kernels() noexcept;
#endif

/// Best table supported by this CPU (or the one forced via TEPO_SIMD).
const KernelTable& active() noexcept;

/// Every table usable on this CPU, scalar first.
std::size_t available(const KernelTable** out, std::size_t capacity) noexcept;

}  // namespace tepo::simd
