#include <cmath>
#include <random>

#include "doctest.h"
#include "laplace_oracle.hpp"
#include "nb_util.hpp"
#include "netspill/errors.hpp"
#include "netspill/negbin.hpp"

using namespace netspill;

namespace {

DesignTable nested_design(std::uint64_t seed, int groups, int regions, int rows_per_region,
                          double vg, double vr, double alpha, const Eigen::VectorXd& beta) {
  std::mt19937_64 g(seed);
  auto d = nbutil::random_design(g, groups * regions * rows_per_region,
                                 static_cast<int>(beta.size()) - 1);
  nbutil::assign_nesting(d, groups, regions);
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::VectorXd ug(groups), ur(groups * regions);
  for (auto& u : ug) u = std::sqrt(vg) * z(g);
  for (auto& u : ur) u = std::sqrt(vr) * z(g);
  d.offset.setConstant(std::log(50.0));
  nbutil::fill_outcome(g, d, beta, alpha, ug, ur);
  return d;
}

}  // namespace

TEST_CASE("Laplace log-likelihood matches a dense Laplace oracle") {
  const Eigen::Vector2d beta(-3.0, 0.4);
  const auto d = nested_design(1, 6, 4, 3, 0.4, 0.6, 0.5, beta);
  std::mt19937_64 g(2);
  std::normal_distribution<double> z(0.0, 0.3);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd t2(5);
    t2 << -3.0 + z(g), 0.4 + z(g), std::log(0.5) + z(g), std::log(0.4) + z(g), std::log(0.6) + z(g);
    const double got2 = nb::laplace_loglik(d, {"group", "region"}, t2, false).loglik;
    CHECK(got2 == doctest::Approx(laplace_oracle::dense_laplace(d, true, t2)).epsilon(1e-9));
    const Eigen::VectorXd t1 = t2.head(4);
    const double got1 = nb::laplace_loglik(d, {"group"}, t1, false).loglik;
    CHECK(got1 == doctest::Approx(laplace_oracle::dense_laplace(d, false, t1)).epsilon(1e-9));
  }
}

TEST_CASE("Laplace gradient matches finite differences") {
  const Eigen::Vector3d beta(-3.0, 0.4, -0.2);
  const auto d = nested_design(3, 5, 3, 4, 0.3, 0.5, 0.8, beta);
  std::mt19937_64 g(4);
  std::normal_distribution<double> z(0.0, 0.3);
  for (const std::vector<std::string>& levels :
       {std::vector<std::string>{"group"}, std::vector<std::string>{"group", "region"}}) {
    const Eigen::Index k = 4 + static_cast<Eigen::Index>(levels.size());
    for (int rep = 0; rep < 5; ++rep) {
      Eigen::VectorXd t(k);
      t << -3.0 + z(g), 0.4 + z(g), -0.2 + z(g), std::log(0.8) + z(g), std::log(0.3) + z(g);
      if (k == 6) t[5] = std::log(0.5) + z(g);
      const auto v = nb::laplace_loglik(d, levels, t);
      for (Eigen::Index j = 0; j < k; ++j) {
        const double h = 1e-5;
        Eigen::VectorXd tp = t, tm = t;
        tp[j] += h;
        tm[j] -= h;
        const double fd = (nb::laplace_loglik(d, levels, tp, false).loglik -
                           nb::laplace_loglik(d, levels, tm, false).loglik) /
                          (2 * h);
        CHECK(std::abs(v.gradient[j] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("Laplace is close to 64-node Gauss-Hermite on tiny groups") {
  const Eigen::Vector2d beta(-2.0, 0.5);
  auto d = nested_design(5, 5, 1, 4, 0.5, 0.0, 0.6, beta);
  Eigen::VectorXd t(4);
  t << -2.0, 0.5, std::log(0.6), std::log(0.5);
  const double lap = nb::laplace_loglik(d, {"group"}, t, false).loglik;
  const double gh = laplace_oracle::gauss_hermite_1level(d, t);
  CHECK(std::abs(lap - gh) / std::abs(gh) < 0.02);
  // the quadrature oracle itself is converged
  CHECK(laplace_oracle::gauss_hermite_1level(d, t, 40) == doctest::Approx(gh).epsilon(1e-8));
}

TEST_CASE("two-level recovery on a moderate simulation") {
  Eigen::Vector2d beta(-2.5, 0.3);
  const auto d = nested_design(11, 30, 5, 6, 0.3, 0.5, 0.8, beta);
  const auto f = fit_nb_mixed(d, {"group", "region"});
  REQUIRE(f.converged());
  for (int j = 0; j < 2; ++j) CHECK(std::abs(f.beta[j] - beta[j]) < 3 * f.se[j]);
  REQUIRE(f.variance_components.size() == 2);
  CHECK(f.variance_components[0].level == "group");
  CHECK(f.variance_components[1].level == "region");
  CHECK(std::isfinite(f.robust_se[1]));
  CHECK(f.cluster == ClusterLevel::group);
  CHECK(f.n_clusters == 30);
  // the reported optimum is a stationary point of the Laplace likelihood
  Eigen::VectorXd t(5);
  t << f.beta, f.ln_alpha, std::log(f.variance_components[0].variance),
      std::log(f.variance_components[1].variance);
  const auto v = nb::laplace_loglik(d, {"group", "region"}, t);
  CHECK(v.loglik == doctest::Approx(f.loglik).epsilon(1e-12));
  CHECK(v.gradient.cwiseAbs().maxCoeff() < 1e-4);

  const auto again = fit_nb_mixed(d, {"group", "region"});
  CHECK(again.beta == f.beta);
  CHECK(again.se == f.se);
}

TEST_CASE("no group structure collapses to the fixed-effect fit") {
  std::mt19937_64 g(12);
  auto block = nbutil::random_design(g, 8, 1);
  nbutil::fill_outcome(g, block, Eigen::Vector2d(1.0, 0.5), 0.3);
  // every region carries an identical copy of the same rows
  const int groups = 6, regions = 3, n = groups * regions * 8;
  auto d = nbutil::random_design(g, n, 1);
  for (int i = 0; i < n; ++i) {
    d.x.row(i) = block.x.row(i % 8);
    d.y[i] = block.y[i % 8];
  }
  nbutil::assign_nesting(d, groups, regions);
  const auto glm = fit_nb_glm(d);
  const auto mixed = fit_nb_mixed(d, {"group", "region"});
  CHECK((mixed.beta - glm.beta).cwiseAbs().maxCoeff() < 1e-4);
  for (const auto& vc : mixed.variance_components) CHECK(vc.at_boundary);
}

TEST_CASE("single group is flagged as unidentified") {
  auto d = nested_design(13, 1, 10, 5, 0.0, 0.4, 0.5, Eigen::Vector2d(-2.0, 0.3));
  const auto f = fit_nb_mixed(d, {"group"});
  REQUIRE(f.variance_components.size() == 1);
  CHECK_FALSE(f.variance_components[0].identified);
  CHECK(f.variance_components[0].at_boundary);
  CHECK(std::isfinite(f.beta[1]));
}

TEST_CASE("mixed fit contract errors") {
  auto d = nested_design(14, 4, 2, 3, 0.2, 0.2, 0.5, Eigen::Vector2d(-2.0, 0.3));
  CHECK_THROWS_AS(fit_nb_mixed(d, {"group"}, {.cluster = ClusterLevel::region}), ConfigError);
  auto w = d;
  w.weights[0] = 2.0;
  CHECK_THROWS_AS(fit_nb_mixed(w, {"group"}), ConfigError);
  auto bad = d;
  bad.group[0] = 3;  // region 0 now spans two groups
  CHECK_THROWS(fit_nb_mixed(bad, {"group", "region"}));
  CHECK_THROWS_AS(fit_model(d, {"state"}), Error);
}
