#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "milpf/backprop.hpp"
#include "milpf/error.hpp"
#include "oracles.hpp"

using namespace milpf;

namespace {

std::vector<EmbedBag> random_problem(std::mt19937_64& rng, std::size_t d, int n_bags) {
  std::vector<EmbedBag> bags;
  for (int i = 0; i < n_bags; ++i)
    bags.push_back(oracle::random_bag(rng, d, 1 + i % 3, 2 + (i * 5) % 7, i % 2, "b" + std::to_string(i)));
  return bags;
}

}  // namespace

TEST_CASE("gradient at zero parameters") {
  std::mt19937_64 rng(1);
  const auto bags = random_problem(rng, 6, 4);  // labels 0,1,0,1
  const auto p = HeadParams::zeros({}, 6);
  const auto lg = loss_and_grad(bags, p);
  CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(lg.grad.head_b == doctest::Approx(0.0));

  auto skewed = bags;
  skewed[0].label = 1;  // 3/4 positive
  CHECK(loss_and_grad(skewed, p).grad.head_b == doctest::Approx(0.5 - 0.75).epsilon(1e-15));
}

TEST_CASE("matches central differences on random problems") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t d = 6 + seed % 3;
    const auto bags = random_problem(rng, d, 4);
    const auto p = oracle::random_params(rng, {AggKind::attention, AggKind::attention}, d);
    const auto ptrs = bag_pointers(bags);
    const auto r = milpf::testing::check_gradient(ptrs, p);
    INFO("seed " << seed << " worst " << p.tensor_name(r.worst));
    CHECK(r.max_rel <= 1e-5);
    CHECK(r.checked > r.skipped);
  }
  for (auto cfg : {AggConfig{AggKind::max, AggKind::attention}, AggConfig{AggKind::mean, AggKind::max},
                   AggConfig{AggKind::none, AggKind::mean}}) {
    std::mt19937_64 rng(77);
    const auto bags = random_problem(rng, 7, 4);
    const auto p = oracle::random_params(rng, cfg, 7);
    const auto r = milpf::testing::check_gradient(bag_pointers(bags), p);
    CHECK(r.max_rel <= 1e-5);
  }
}

TEST_CASE("closed form in the linear regime") {
  // One bag, one view, global mean only, biases large enough that every ReLU
  // is active: logit = w.(W2 (W1 e + b1) + b2) + b, so with s = sigmoid - y:
  //   dL/db = s, dL/dw = s u, dL/db2 = s w, dL/dW2 = s w h^T,
  //   dL/db1 = s W2^T w, dL/dW1 = s (W2^T w) e^T.
  std::mt19937_64 rng(3);
  auto bag = oracle::random_bag(rng, 5, 1, 1, 1);
  auto p = oracle::random_params(rng, {AggKind::mean, AggKind::none}, 5, 0.1, 0.0);
  for (auto& b : p.global.b1) b = 10.0;
  for (auto& b : p.global.b2) b = 10.0;
  const auto e = bag.global_embeds.row(0);
  std::vector<double> h(16), u(8);
  for (std::size_t i = 0; i < 16; ++i) {
    h[i] = p.global.b1[i];
    for (std::size_t k = 0; k < 5; ++k) h[i] += p.global.w1(i, k) * e[k];
    REQUIRE(h[i] > 0);
  }
  for (std::size_t r = 0; r < 8; ++r) {
    u[r] = p.global.b2[r];
    for (std::size_t i = 0; i < 16; ++i) u[r] += p.global.w2(r, i) * h[i];
    REQUIRE(u[r] > 0);
  }
  double logit = p.head_b;
  for (std::size_t r = 0; r < 8; ++r) logit += p.head_w[r] * u[r];
  const double s = 1.0 / (1.0 + std::exp(-logit)) - 1.0;

  const auto g = loss_and_grad(std::vector<EmbedBag>{bag}, p).grad;
  CHECK(g.head_b == doctest::Approx(s).epsilon(1e-13));
  for (std::size_t r = 0; r < 8; ++r) {
    CHECK(g.head_w[r] == doctest::Approx(s * u[r]).epsilon(1e-13));
    CHECK(g.head_w[8 + r] == 0.0);
    CHECK(g.global.b2[r] == doctest::Approx(s * p.head_w[r]).epsilon(1e-13));
    for (std::size_t i = 0; i < 16; ++i)
      CHECK(g.global.w2(r, i) == doctest::Approx(s * p.head_w[r] * h[i]).epsilon(1e-13));
  }
  for (std::size_t i = 0; i < 16; ++i) {
    double back = 0;
    for (std::size_t r = 0; r < 8; ++r) back += p.global.w2(r, i) * p.head_w[r];
    CHECK(g.global.b1[i] == doctest::Approx(s * back).epsilon(1e-12));
    for (std::size_t k = 0; k < 5; ++k)
      CHECK(g.global.w1(i, k) == doctest::Approx(s * back * e[k]).epsilon(1e-12));
  }
}

TEST_CASE("gradient of the mean is the mean of per-bag gradients") {
  std::mt19937_64 rng(21);
  const auto bags = random_problem(rng, 8, 6);
  const auto p = oracle::random_params(rng, {AggKind::max, AggKind::attention}, 8);
  const auto whole = loss_and_grad(bags, p).grad.flatten();
  std::vector<double> sum(whole.size(), 0.0);
  for (const auto& b : bags) {
    const auto g = loss_and_grad(std::vector<EmbedBag>{b}, p).grad.flatten();
    for (std::size_t k = 0; k < g.size(); ++k) sum[k] += g[k] / bags.size();
  }
  double scale = 0;
  for (double x : whole) scale = std::max(scale, std::abs(x));
  for (std::size_t k = 0; k < whole.size(); ++k) CHECK(std::abs(whole[k] - sum[k]) <= 1e-12 * scale);
}

TEST_CASE("a small step along the negative gradient lowers the loss") {
  int decreased = 0;
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    std::mt19937_64 rng(seed);
    const auto bags = random_problem(rng, 6, 4);
    const auto p = oracle::random_params(rng, {AggKind::max, AggKind::attention}, 6);
    const auto lg = loss_and_grad(bags, p);
    auto flat = p.flatten();
    const auto g = lg.grad.flatten();
    for (std::size_t k = 0; k < flat.size(); ++k) flat[k] -= 1e-3 * g[k];
    auto q = p;
    q.assign(flat);
    const auto ptrs = bag_pointers(bags);
    decreased += mean_loss(ptrs, q) < lg.loss;
  }
  CHECK(decreased == 20);
}

TEST_CASE("fd_gradient on a quadratic") {
  // f(x) = sum a_i x_i^2 + b_i x_i; central differences are exact up to
  // rounding for quadratics.
  const std::vector<double> a{1.5, -2.0, 0.25}, b{0.5, 1.0, -3.0}, x{0.3, -1.7, 4.0};
  const auto f = [&](std::span<const double> v) {
    double s = 0;
    for (std::size_t i = 0; i < v.size(); ++i) s += a[i] * v[i] * v[i] + b[i] * v[i];
    return s;
  };
  const auto g = fd_gradient(f, x, 1e-4);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(g[i] == doctest::Approx(2 * a[i] * x[i] + b[i]).epsilon(1e-9));
  CHECK_THROWS_AS(fd_gradient(f, x, 0.0), ConfigError);
}

TEST_CASE("saturated correct logits give a near-zero gradient") {
  std::mt19937_64 rng(2);
  auto bags = random_problem(rng, 6, 4);
  for (auto& b : bags) b.label = 1;
  auto p = HeadParams::zeros({}, 6);
  p.head_b = 60.0;
  const auto ptrs = bag_pointers(bags);
  for (double x : fd_grad(ptrs, p, 1e-6).flatten()) CHECK(std::abs(x) < 1e-20);
  for (double x : loss_and_grad(ptrs, p).grad.flatten()) CHECK(std::abs(x) < 1e-20);
}

TEST_CASE("errors") {
  std::mt19937_64 rng(2);
  auto bags = random_problem(rng, 6, 2);
  const auto p = HeadParams::zeros({}, 6);
  CHECK_THROWS_AS(loss_and_grad(std::vector<EmbedBag>{}, p), ConfigError);
  CHECK_THROWS_AS(loss_and_grad(random_problem(rng, 5, 2), p), DataError);
  auto huge = oracle::random_params(rng, {}, 6);
  huge.head_b = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(loss_and_grad(bags, huge), NumericError);
}

TEST_CASE("coordinates sitting on a ReLU kink are excluded") {
  std::mt19937_64 rng(31);
  const auto bags = random_problem(rng, 6, 4);
  auto p = oracle::random_params(rng, {AggKind::max, AggKind::attention}, 6);
  // Hidden unit 0 of the global stream has pre-activation exactly 0 for every
  // instance, so perturbing its bias in either direction changes the ReLU sign.
  for (std::size_t k = 0; k < 6; ++k) p.global.w1(0, k) = 0.0;
  p.global.b1[0] = 0.0;
  const auto r = milpf::testing::check_gradient(bag_pointers(bags), p);
  CHECK(r.skipped >= 1);
  CHECK(r.max_rel <= 1e-5);
}
