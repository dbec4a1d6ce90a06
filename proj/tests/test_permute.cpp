#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "nb_util.hpp"
#include "netspill/errors.hpp"
#include "netspill/permute.hpp"

using namespace netspill;

TEST_CASE("maape examples") {
  const std::vector<double> y{3, 0, 8.5};
  CHECK(maape(y, y) == 0.0);
  CHECK(std::abs(maape(std::vector<double>{0}, std::vector<double>{7}) - std::numbers::pi / 2) < 1e-9);
  CHECK(std::abs(maape(std::vector<double>{2, 4}, std::vector<double>{3, 2}) - 0.4636476090008061) <
        1e-9);
  CHECK(maape(std::vector<double>{0}, std::vector<double>{0}) == 0.0);
  CHECK_THROWS_AS(maape(std::vector<double>{1, 2}, std::vector<double>{1}), DataError);
  CHECK_THROWS_AS(maape(std::vector<double>{}, std::vector<double>{}), DataError);
}

TEST_CASE("maape properties") {
  std::mt19937_64 g(1);
  std::uniform_int_distribution<int> len(1, 30);
  std::exponential_distribution<double> ex(0.1);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int rep = 0; rep < 2000; ++rep) {
    const int n = len(g);
    std::vector<double> y(n), yhat(n);
    for (int i = 0; i < n; ++i) {
      y[i] = g() % 4 == 0 ? 0.0 : std::floor(ex(g));
      yhat[i] = g() % 5 == 0 ? y[i] : std::max(0.0, y[i] + u(g));
    }
    const double m = maape(y, yhat);
    CHECK(m >= 0.0);
    CHECK(m <= std::numbers::pi / 2);

    // symmetry in the sign of the error
    std::vector<double> up(n), down(n);
    for (int i = 0; i < n; ++i) {
      up[i] = y[i] + 0.5;
      down[i] = y[i] - 0.5;
    }
    CHECK(maape(y, up) == doctest::Approx(maape(y, down)).epsilon(1e-15));

    // monotone in each absolute error
    const int k = static_cast<int>(g() % static_cast<std::uint64_t>(n));
    auto worse = yhat;
    worse[k] = y[k] + (yhat[k] >= y[k] ? 1.0 : -1.0) * (std::abs(yhat[k] - y[k]) + 1.0);
    CHECK(maape(y, worse) >= m);
  }
}

namespace {

DesignTable signal_design(std::uint64_t seed, double beta_signal) {
  std::mt19937_64 g(seed);
  auto d = nbutil::random_design(g, 400, 2);
  d.columns = {"_cons", "signal", "noise"};
  d.offset.setConstant(std::log(100.0));
  nbutil::fill_outcome(g, d, Eigen::Vector3d(-3.0, beta_signal, 0.0), 0.3);
  for (Eigen::Index i = 0; i < d.rows(); ++i) d.period[static_cast<std::size_t>(i)] = static_cast<int>(i % 4);
  return d;
}

ModelSpec spec_for(const DesignTable&) {
  ModelSpec s;
  s.predictors = {"signal", "noise"};
  return s;
}

}  // namespace

TEST_CASE("strong predictor is never beaten by its permutations") {
  const auto d = signal_design(2, 1.0);
  const auto r = permutation_test(d, spec_for(d), "signal", {.n_permutations = 30, .seed = 5});
  CHECK(r.proportion_lower == 0.0);
  CHECK(r.permuted_maapes.size() == 30);
  CHECK(r.n_failed == 0);
  CHECK(r.observed_maape < *std::min_element(r.permuted_maapes.begin(), r.permuted_maapes.end()));
}

TEST_CASE("permutation test is reproducible and seed dependent") {
  const auto d = signal_design(3, 0.0);
  const PermutationOptions opt{.n_permutations = 20, .seed = 9};
  const auto a = permutation_test(d, spec_for(d), "noise", opt);
  const auto b = permutation_test(d, spec_for(d), "noise", opt);
  CHECK(a.permuted_maapes == b.permuted_maapes);
  CHECK(a.proportion_lower == b.proportion_lower);
  CHECK(a.proportion_lower >= 0.0);
  CHECK(a.proportion_lower <= 1.0);
  auto opt2 = opt;
  opt2.seed = 10;
  const auto c = permutation_test(d, spec_for(d), "noise", opt2);
  CHECK(c.permuted_maapes != a.permuted_maapes);
  auto opt3 = opt;
  opt3.threads = 3;
  CHECK(permutation_test(d, spec_for(d), "noise", opt3).permuted_maapes == a.permuted_maapes);
}

TEST_CASE("permuting a permuted predictor leaves the null distribution in place") {
  // Two seeds on a toy case: the permuted MAAPE samples overlap in range.
  auto d = signal_design(4, 0.0);
  const auto a = permutation_test(d, spec_for(d), "noise", {.n_permutations = 40, .seed = 1});
  std::mt19937_64 g(77);
  std::vector<double> col(d.rows());
  for (Eigen::Index i = 0; i < d.rows(); ++i) col[i] = d.x(i, 2);
  std::shuffle(col.begin(), col.end(), g);
  for (Eigen::Index i = 0; i < d.rows(); ++i) d.x(i, 2) = col[i];
  const auto b = permutation_test(d, spec_for(d), "noise", {.n_permutations = 40, .seed = 2});
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / v.size();
  };
  auto sd = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (v.size() - 1));
  };
  const double pooled = std::sqrt(0.5 * (sd(a.permuted_maapes) * sd(a.permuted_maapes) +
                                         sd(b.permuted_maapes) * sd(b.permuted_maapes)));
  CHECK(std::abs(mean(a.permuted_maapes) - mean(b.permuted_maapes)) < 4 * pooled);
}

TEST_CASE("within-period shuffles keep values inside their period") {
  auto d = signal_design(5, 0.5);
  // a predictor equal to the period index is invariant under within-period shuffles
  d.columns[2] = "period_index";
  for (Eigen::Index i = 0; i < d.rows(); ++i) d.x(i, 2) = d.period[static_cast<std::size_t>(i)];
  ModelSpec s;
  s.predictors = {"signal", "period_index"};
  const auto r = permutation_test(d, s, "period_index",
                                  {.n_permutations = 5, .seed = 3, .within_period = true});
  for (double m : r.permuted_maapes) CHECK(m == doctest::Approx(r.observed_maape).epsilon(1e-9));
  CHECK(r.within_period);
}

TEST_CASE("constant predictor warns and reports zero") {
  auto d = signal_design(6, 0.5);
  d.x.col(2).setConstant(3.0);
  const auto r = permutation_test(d, spec_for(d), "noise", {.n_permutations = 10, .seed = 1});
  CHECK(r.proportion_lower == 0.0);
  CHECK(r.warnings.size() == 1);
  for (double m : r.permuted_maapes) CHECK(m == r.observed_maape);
}

TEST_CASE("permutation contract errors") {
  const auto d = signal_design(7, 0.5);
  CHECK_THROWS_AS(permutation_test(d, spec_for(d), "absent"), ConfigError);
  CHECK_THROWS_AS(permutation_test(d, spec_for(d), "noise", {.n_permutations = 0}), ConfigError);
}
