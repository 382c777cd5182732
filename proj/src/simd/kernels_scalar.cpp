#include "tepo/simd.hpp"

namespace tepo::simd {
namespace {

double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void relu(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!(x[i] > 0.0)) x[i] = 0.0;
}

void relu_backward(const double* act, double* g, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!(act[i] > 0.0)) g[i] = 0.0;
}

std::size_t count_nonzero(const std::uint8_t* m, std::size_t n) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) k += m[i] != 0;
  return k;
}

std::size_t count_both(const std::uint8_t* a, const std::uint8_t* b, std::size_t n) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) k += (a[i] != 0) & (b[i] != 0);
  return k;
}

void threshold_half(const float* p, std::uint8_t* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = p[i] > 0.5f ? 1 : 0;
}

}  // namespace

const KernelTable& scalar_kernels() noexcept {
  static const KernelTable table{"scalar", dot,           axpy,       relu,
                                 relu_backward, count_nonzero, count_both, threshold_half};
  return table;
}

}  // namespace tepo::simd
