#include "milpf/simd.hpp"

namespace milpf::simd {
namespace {

template <class In>
void affine(const In* x, std::size_t d, const double* wt, const double* b, std::size_t n,
            double* out) {
  for (std::size_t j = 0; j < n; ++j) out[j] = b ? b[j] : 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double xk = static_cast<double>(x[k]);
    const double* w = wt + k * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += xk * w[j];
  }
}

template <class In>
void outer_acc(const In* x, std::size_t d, const double* g, std::size_t n, double* wt) {
  for (std::size_t k = 0; k < d; ++k) {
    const double xk = static_cast<double>(x[k]);
    double* w = wt + k * n;
    for (std::size_t j = 0; j < n; ++j) w[j] += xk * g[j];
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

const Kernels& scalar_kernels() {
  static const Kernels k{"scalar", &affine<float>, &affine<double>, &outer_acc<float>,
                         &outer_acc<double>, &dot};
  return k;
}

}  // namespace milpf::simd
