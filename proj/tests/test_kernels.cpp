#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "doctest.h"
#include "netspill/kernels.hpp"

namespace k = netspill::kernels;

namespace {

std::vector<double> random_vec(std::mt19937_64& g, std::size_t n) {
  std::normal_distribution<double> d(0.0, 10.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(g);
  return v;
}

double naive_dot(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(s);
}

}  // namespace

TEST_CASE("scalar kernels match naive loops") {
  std::mt19937_64 g(7);
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 8u, 17u, 64u, 101u}) {
    const auto a = random_vec(g, n);
    const auto b = random_vec(g, n);
    CHECK(k::scalar::dot(a, b) == doctest::Approx(naive_dot(a, b)).epsilon(1e-12));
    long double s = 0;
    for (double x : a) s += x;
    CHECK(k::scalar::sum(a) == doctest::Approx(static_cast<double>(s)).epsilon(1e-12));
  }
}

TEST_CASE("avx2 kernels agree with scalar kernels") {
  if (!k::isa_available(k::Isa::avx2)) return;
  std::mt19937_64 g(11);
  for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 5u, 7u, 8u, 9u, 15u, 16u, 33u, 257u}) {
    const auto a = random_vec(g, n);
    const auto b = random_vec(g, n);
    const double scale = 1.0 + naive_dot(a, a);
    CHECK(std::abs(k::avx2::dot(a, b) - k::scalar::dot(a, b)) <= 1e-12 * scale);
    CHECK(std::abs(k::avx2::sum(a) - k::scalar::sum(a)) <= 1e-12 * scale);

    std::vector<std::uint32_t> idx(n);
    std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(n ? n - 1 : 0));
    for (auto& i : idx) i = pick(g);
    CHECK(std::abs(k::avx2::gather_dot(a, idx, b) - k::scalar::gather_dot(a, idx, b)) <=
          1e-12 * scale);

    auto y1 = b;
    auto y2 = b;
    k::scalar::axpy(0.37, a, y1);
    k::avx2::axpy(0.37, a, y2);
    // fused multiply-add rounds once
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(y1[i] - y2[i]) <= 1e-15 * (std::abs(y1[i]) + std::abs(a[i])));
    }
  }
}

TEST_CASE("isa pinning") {
  k::force_isa(k::Isa::scalar);
  CHECK(k::active_isa() == k::Isa::scalar);
  const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  CHECK(k::dot(a, b) == 32.0);
  k::reset_isa();
  CHECK(k::dot(a, b) == 32.0);
  CHECK(k::to_string(k::Isa::avx2) == "avx2");
}
