#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "milpf/simd.hpp"

using namespace milpf;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("avx2 kernels agree with the scalar reference") {
  const auto* fast = simd::avx2_kernels();
  if (!fast) {
    MESSAGE("AVX2 unavailable; only the scalar path is exercised");
    return;
  }
  const auto& ref = simd::scalar_kernels();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  // Sizes straddle every unroll boundary: blocks of 16, blocks of 4, tails.
  for (std::size_t d : {1u, 3u, 4u, 7u, 15u, 16u, 17u, 32u, 33u, 100u}) {
    for (std::size_t n : {1u, 3u, 4u, 5u, 8u, 16u, 19u}) {
      std::vector<float> xf(d);
      std::vector<double> xd(d), wt(d * n), b(n), g(n);
      for (auto& v : xf) v = static_cast<float>(nd(rng));
      for (auto& v : xd) v = nd(rng);
      for (auto& v : wt) v = nd(rng);
      for (auto& v : b) v = nd(rng);
      for (auto& v : g) v = nd(rng);

      std::vector<double> o1(n), o2(n);
      ref.affine_f32(xf.data(), d, wt.data(), b.data(), n, o1.data());
      fast->affine_f32(xf.data(), d, wt.data(), b.data(), n, o2.data());
      for (std::size_t j = 0; j < n; ++j) CHECK(rel(o2[j], o1[j]) < 1e-12);

      ref.affine_f64(xd.data(), d, wt.data(), nullptr, n, o1.data());
      fast->affine_f64(xd.data(), d, wt.data(), nullptr, n, o2.data());
      for (std::size_t j = 0; j < n; ++j) CHECK(rel(o2[j], o1[j]) < 1e-12);

      auto a1 = wt, a2 = wt;
      ref.outer_acc_f32(xf.data(), d, g.data(), n, a1.data());
      fast->outer_acc_f32(xf.data(), d, g.data(), n, a2.data());
      for (std::size_t k = 0; k < a1.size(); ++k) CHECK(rel(a2[k], a1[k]) < 1e-14);

      a1 = wt, a2 = wt;
      ref.outer_acc_f64(xd.data(), d, g.data(), n, a1.data());
      fast->outer_acc_f64(xd.data(), d, g.data(), n, a2.data());
      for (std::size_t k = 0; k < a1.size(); ++k) CHECK(rel(a2[k], a1[k]) < 1e-14);

      CHECK(rel(fast->dot(xd.data(), wt.data(), d), ref.dot(xd.data(), wt.data(), d)) < 1e-12);
    }
  }
}

TEST_CASE("active kernel set is one of the compiled variants") {
  const auto& k = simd::active();
  const auto* fast = simd::avx2_kernels();
  CHECK((&k == &simd::scalar_kernels() || (fast && &k == fast)));
}
