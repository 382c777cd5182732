#include "tepo/simd.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

namespace tepo::simd {
namespace {

double dot(const double* x, const double* y, std::size_t n) {
  float64x2_t s0 = vdupq_n_f64(0.0);
  float64x2_t s1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 = vfmaq_f64(s0, vld1q_f64(x + i), vld1q_f64(y + i));
    s1 = vfmaq_f64(s1, vld1q_f64(x + i + 2), vld1q_f64(y + i + 2));
  }
  double s = vaddvq_f64(vaddq_f64(s0, s1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void relu(double* x, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t v = vld1q_f64(x + i);
    uint64x2_t keep = vcgtq_f64(v, zero);
    vst1q_f64(x + i, vreinterpretq_f64_u64(vandq_u64(vreinterpretq_u64_f64(v), keep)));
  }
  for (; i < n; ++i)
    if (!(x[i] > 0.0)) x[i] = 0.0;
}

void relu_backward(const double* act, double* g, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    uint64x2_t keep = vcgtq_f64(vld1q_f64(act + i), zero);
    float64x2_t v = vld1q_f64(g + i);
    vst1q_f64(g + i, vreinterpretq_f64_u64(vandq_u64(vreinterpretq_u64_f64(v), keep)));
  }
  for (; i < n; ++i)
    if (!(act[i] > 0.0)) g[i] = 0.0;
}

std::size_t count_nonzero(const std::uint8_t* m, std::size_t n) {
  std::size_t k = 0;
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    uint8x16_t nz = vtstq_u8(vld1q_u8(m + i), vld1q_u8(m + i));
    k += vaddvq_u8(vshrq_n_u8(nz, 7));
  }
  for (; i < n; ++i) k += m[i] != 0;
  return k;
}

std::size_t count_both(const std::uint8_t* a, const std::uint8_t* b, std::size_t n) {
  std::size_t k = 0;
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    uint8x16_t va = vld1q_u8(a + i);
    uint8x16_t vb = vld1q_u8(b + i);
    uint8x16_t both = vandq_u8(vtstq_u8(va, va), vtstq_u8(vb, vb));
    k += vaddvq_u8(vshrq_n_u8(both, 7));
  }
  for (; i < n; ++i) k += (a[i] != 0) & (b[i] != 0);
  return k;
}

void threshold_half(const float* p, std::uint8_t* out, std::size_t n) {
  const float32x4_t half = vdupq_n_f32(0.5f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    uint32x4_t gt = vcgtq_f32(vld1q_f32(p + i), half);
    uint32_t lanes[4];
    vst1q_u32(lanes, vshrq_n_u32(gt, 31));
    for (int j = 0; j < 4; ++j) out[i + j] = static_cast<std::uint8_t>(lanes[j]);
  }
  for (; i < n; ++i) out[i] = p[i] > 0.5f ? 1 : 0;
}

}  // namespace

const KernelTable& neon_kernels() noexcept {
  static const KernelTable table{"neon", dot,           axpy,       relu,
                                 relu_backward, count_nonzero, count_both, threshold_half};
  return table;
}

}  // namespace tepo::simd

#endif
