#include <cstdlib>
#include <cstring>

#include "tepo/simd.hpp"

namespace tepo::simd {
namespace {

bool cpu_has_avx2() noexcept {
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma") &&
         __builtin_cpu_supports("popcnt");
#else
  return false;
#endif
}

const KernelTable& select() noexcept {
  const char* forced = std::getenv("TEPO_SIMD");
  if (forced != nullptr && std::strcmp(forced, "scalar") == 0) return scalar_kernels();
#if defined(__x86_64__) || defined(_M_X64)
  if (cpu_has_avx2()) return avx2_kernels();
#endif
#if defined(__aarch64__)
  return neon_kernels();
#else
  return scalar_kernels();
#endif
}

}  // namespace

const KernelTable& active() noexcept {
  static const KernelTable& table = select();
  return table;
}

std::size_t available(const KernelTable** out, std::size_t capacity) noexcept {
  std::size_t n = 0;
  auto push = [&](const KernelTable& t) {
    if (n < capacity) out[n] = &t;
    ++n;
  };
  push(scalar_kernels());
#if defined(__x86_64__) || defined(_M_X64)
  if (cpu_has_avx2()) push(avx2_kernels());
#endif
#if defined(__aarch64__)
  push(neon_kernels());
#endif
  return n < capacity ? n : capacity;
}

}  // namespace tepo::simd
