#include <cstdlib>
#include <string_view>

#include "milpf/simd.hpp"

namespace milpf::simd {

#if defined(MILPF_HAVE_AVX2)
const Kernels& avx2_kernel_table();
#endif

const Kernels* avx2_kernels() {
#if defined(MILPF_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2_kernel_table() : nullptr;
#else
  return nullptr;
#endif
}

const Kernels& active() {
  static const Kernels& chosen = [] () -> const Kernels& {
    const char* env = std::getenv("MILPF_SIMD");
    if (env && std::string_view(env) == "scalar") return scalar_kernels();
    if (const Kernels* k = avx2_kernels()) return *k;
    return scalar_kernels();
  }();
  return chosen;
}

}  // namespace milpf::simd
