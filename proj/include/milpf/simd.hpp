#pragma once

// Inner-loop kernels for the head. Every kernel has a scalar reference
// implementation; an AVX2+FMA variant is selected at runtime when the CPU
// supports it. Set MILPF_SIMD=scalar in the environment to force the
// reference path.

#include <cstddef>
#include <span>

namespace milpf::simd {

struct Kernels {
  const char* name;

  // out[j] = b[j] + sum_k x[k] * wt[k * n + j]   (b may be null -> 0)
  void (*affine_f32)(const float* x, std::size_t d, const double* wt, const double* b,
                     std::size_t n, double* out);
  void (*affine_f64)(const double* x, std::size_t d, const double* wt, const double* b,
                     std::size_t n, double* out);

  // wt[k * n + j] += x[k] * g[j]
  void (*outer_acc_f32)(const float* x, std::size_t d, const double* g, std::size_t n,
                        double* wt);
  void (*outer_acc_f64)(const double* x, std::size_t d, const double* g, std::size_t n,
                        double* wt);

  double (*dot)(const double* a, const double* b, std::size_t n);
};

const Kernels& scalar_kernels();

// Null when the AVX2 variant was not compiled in or the CPU lacks AVX2/FMA.
const Kernels* avx2_kernels();

// Kernel set used by the library. Chosen once, on first call.
const Kernels& active();

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

}  // namespace milpf::simd
