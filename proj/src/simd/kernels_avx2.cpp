// Compiled with -mavx2 -mfma; only entered after a runtime CPU check.

#include <immintrin.h>

#include "milpf/simd.hpp"

namespace milpf::simd {
namespace {

inline __m256d widen(float v) { return _mm256_set1_pd(static_cast<double>(v)); }
inline __m256d widen(double v) { return _mm256_set1_pd(v); }

template <class In>
void affine(const In* x, std::size_t d, const double* wt, const double* b, std::size_t n,
            double* out) {
  std::size_t j = 0;
  // Four accumulators cover the common 16-wide hidden layer in one pass over x.
  for (; j + 16 <= n; j += 16) {
    __m256d a0 = b ? _mm256_loadu_pd(b + j) : _mm256_setzero_pd();
    __m256d a1 = b ? _mm256_loadu_pd(b + j + 4) : _mm256_setzero_pd();
    __m256d a2 = b ? _mm256_loadu_pd(b + j + 8) : _mm256_setzero_pd();
    __m256d a3 = b ? _mm256_loadu_pd(b + j + 12) : _mm256_setzero_pd();
    for (std::size_t k = 0; k < d; ++k) {
      const __m256d xk = widen(x[k]);
      const double* w = wt + k * n + j;
      a0 = _mm256_fmadd_pd(xk, _mm256_loadu_pd(w), a0);
      a1 = _mm256_fmadd_pd(xk, _mm256_loadu_pd(w + 4), a1);
      a2 = _mm256_fmadd_pd(xk, _mm256_loadu_pd(w + 8), a2);
      a3 = _mm256_fmadd_pd(xk, _mm256_loadu_pd(w + 12), a3);
    }
    _mm256_storeu_pd(out + j, a0);
    _mm256_storeu_pd(out + j + 4, a1);
    _mm256_storeu_pd(out + j + 8, a2);
    _mm256_storeu_pd(out + j + 12, a3);
  }
  for (; j + 4 <= n; j += 4) {
    __m256d a = b ? _mm256_loadu_pd(b + j) : _mm256_setzero_pd();
    for (std::size_t k = 0; k < d; ++k)
      a = _mm256_fmadd_pd(widen(x[k]), _mm256_loadu_pd(wt + k * n + j), a);
    _mm256_storeu_pd(out + j, a);
  }
  for (; j < n; ++j) {
    double a = b ? b[j] : 0.0;
    for (std::size_t k = 0; k < d; ++k) a += static_cast<double>(x[k]) * wt[k * n + j];
    out[j] = a;
  }
}

template <class In>
void outer_acc(const In* x, std::size_t d, const double* g, std::size_t n, double* wt) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) {
    const __m256d g0 = _mm256_loadu_pd(g + j);
    const __m256d g1 = _mm256_loadu_pd(g + j + 4);
    const __m256d g2 = _mm256_loadu_pd(g + j + 8);
    const __m256d g3 = _mm256_loadu_pd(g + j + 12);
    for (std::size_t k = 0; k < d; ++k) {
      const __m256d xk = widen(x[k]);
      double* w = wt + k * n + j;
      _mm256_storeu_pd(w, _mm256_fmadd_pd(xk, g0, _mm256_loadu_pd(w)));
      _mm256_storeu_pd(w + 4, _mm256_fmadd_pd(xk, g1, _mm256_loadu_pd(w + 4)));
      _mm256_storeu_pd(w + 8, _mm256_fmadd_pd(xk, g2, _mm256_loadu_pd(w + 8)));
      _mm256_storeu_pd(w + 12, _mm256_fmadd_pd(xk, g3, _mm256_loadu_pd(w + 12)));
    }
  }
  for (; j + 4 <= n; j += 4) {
    const __m256d gv = _mm256_loadu_pd(g + j);
    for (std::size_t k = 0; k < d; ++k) {
      double* w = wt + k * n + j;
      _mm256_storeu_pd(w, _mm256_fmadd_pd(widen(x[k]), gv, _mm256_loadu_pd(w)));
    }
  }
  for (; j < n; ++j)
    for (std::size_t k = 0; k < d; ++k) wt[k * n + j] += static_cast<double>(x[k]) * g[j];
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  const __m128d lo = _mm256_castpd256_pd128(acc);
  const __m128d hi = _mm256_extractf128_pd(acc, 1);
  const __m128d s2 = _mm_add_pd(lo, hi);
  double s = _mm_cvtsd_f64(_mm_add_sd(s2, _mm_unpackhi_pd(s2, s2)));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

const Kernels& avx2_kernel_table() {
  static const Kernels k{"avx2", &affine<float>, &affine<double>, &outer_acc<float>,
                         &outer_acc<double>, &dot};
  return k;
}

}  // namespace milpf::simd
