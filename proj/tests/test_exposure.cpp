#include <cmath>
#include <random>

#include "doctest.h"
#include "exposure_oracle.hpp"
#include "netspill/errors.hpp"
#include "netspill/exposure.hpp"

using namespace netspill;

namespace {

RegionId R(const char* s) { return RegionId(s); }

ContiguityGraph graph(std::initializer_list<std::pair<const char*, const char*>> pairs,
                      std::initializer_list<const char*> all) {
  ContiguityGraph::Adjacency adj;
  for (auto* r : all) adj[R(r)];
  for (auto [a, b] : pairs) {
    adj[R(a)].insert(R(b));
    adj[R(b)].insert(R(a));
  }
  return ContiguityGraph(adj);
}

}  // namespace

TEST_CASE("case rate examples") {
  CHECK(case_rate(10, 10000) == 100.0);
  CHECK(case_rate(0, 5000) == 0.0);
  CHECK(case_rate(30, 15000) == doctest::Approx(200.0).epsilon(1e-15));
  CHECK_THROWS_AS(case_rate(1, 0), DataError);
}

TEST_CASE("network lag hand examples") {
  const auto g = graph({}, {"A", "B", "C"});
  const FlowNetwork net({{R("A"), R("B"), 60}, {R("A"), R("C"), 40}});
  CHECK(net.out_total(R("A")) == 100.0);
  RateMap rates{{R("A"), 0}, {R("B"), 100}, {R("C"), 200}};
  CHECK(*network_lag(net, rates, R("A"), g) == doctest::Approx(140.0).epsilon(1e-15));

  const FlowNetwork single({{R("A"), R("B"), 7}});
  CHECK(*network_lag(single, rates, R("A"), g) == 100.0);

  RateMap zeros{{R("A"), 0}, {R("B"), 0}, {R("C"), 0}};
  CHECK(*network_lag(net, zeros, R("A"), g) == 0.0);
  CHECK_FALSE(network_lag(net, rates, R("B"), g).has_value());
}

TEST_CASE("self flows are excluded unless requested") {
  const auto g = graph({}, {"A", "B"});
  const FlowNetwork net({{R("A"), R("A"), 100}, {R("A"), R("B"), 100}});
  RateMap rates{{R("A"), 10}, {R("B"), 30}};
  CHECK(*network_lag(net, rates, R("A"), g) == 30.0);
  CHECK(*network_lag(net, rates, R("A"), g, {.include_self_flows = true}) == 20.0);
}

TEST_CASE("spatial lag hand examples") {
  const auto g = graph({{"A", "B"}, {"A", "C"}}, {"A", "B", "C", "D"});
  RateMap rates{{R("A"), 0}, {R("B"), 100}, {R("C"), 300}, {R("D"), 5}};
  const auto s = spatial_lag(g, rates, R("A"));
  CHECK(s.value == 200.0);
  CHECK_FALSE(s.isolated);
  CHECK(spatial_lag(g, rates, R("B")).value == 0.0);
  const auto iso = spatial_lag(g, rates, R("D"));
  CHECK(iso.value == 0.0);
  CHECK(iso.isolated);
}

TEST_CASE("delta lag hand examples") {
  const auto g = graph({{"A", "B"}}, {"A", "B", "C"});
  const FlowNetwork net({{R("A"), R("B"), 60}, {R("A"), R("C"), 40}});
  RateMap prior{{R("A"), 0}, {R("B"), 100}, {R("C"), 100}};
  RateMap up{{R("A"), 0}, {R("B"), 150}, {R("C"), 150}};
  CHECK(*network_delta_lag(net, prior, up, R("A"), g) == doctest::Approx(50.0).epsilon(1e-15));
  RateMap mixed{{R("A"), 0}, {R("B"), 110}, {R("C"), 80}};
  CHECK(*network_delta_lag(net, prior, mixed, R("A"), g) == doctest::Approx(-2.0).epsilon(1e-14));
  CHECK(*network_delta_lag(net, prior, prior, R("A"), g) == 0.0);
  // current minus prior: a rise gives a positive delta
  CHECK(spatial_delta_lag(g, prior, up, R("A")).value == 50.0);
}

TEST_CASE("filters renormalize and flag regions with no retained flow") {
  const auto g = graph({{"A", "B"}}, {"A", "B", "C"});
  const FlowNetwork net({{R("A"), R("B"), 60}, {R("A"), R("C"), 40}, {R("C"), R("A"), 10}});
  RateMap rates{{R("A"), 1}, {R("B"), 100}, {R("C"), 200}};
  CHECK(*network_lag(net, rates, R("A"), g, {.filter = NetworkFilter::contiguous_only}) == 100.0);
  CHECK(*network_lag(net, rates, R("A"), g, {.filter = NetworkFilter::noncontiguous_only}) ==
        200.0);
  CHECK_FALSE(network_lag(net, rates, R("C"), g, {.filter = NetworkFilter::contiguous_only}));
  CHECK(parse_network_filter("contiguous") == NetworkFilter::contiguous_only);
  CHECK_THROWS_AS(parse_network_filter("nearby"), ConfigError);
}

TEST_CASE("engine matches naive oracle on random graphs") {
  std::mt19937_64 g(2024);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 2 + g() % 20;
    const auto w = oracle::random_world(g, n, 2);
    const auto rates = oracle::rates_at(w.panel, 0);
    for (bool self : {false, true}) {
      for (auto [f, of] : {std::pair{NetworkFilter::all, oracle::Filter::all},
                           std::pair{NetworkFilter::contiguous_only, oracle::Filter::contiguous},
                           std::pair{NetworkFilter::noncontiguous_only,
                                     oracle::Filter::noncontiguous}}) {
        const ExposureEngine eng(w.regions, w.network, w.contiguity,
                                 {.filter = f, .include_self_flows = self});
        for (std::size_t h = 0; h < n; ++h) {
          const auto got = eng.network(h, rates);
          const auto want = oracle::network(w, h, rates, of, self);
          REQUIRE(got.has_value() == want.has_value());
          if (got) {
            CHECK(std::abs(*got - *want) <= 1e-12 * std::max(1.0, std::abs(*want)));
            double s = 0.0;
            for (double x : eng.network_weights(h)) s += x;
            CHECK(std::abs(s - 1.0) <= 1e-12);
          }
          const auto sp = eng.spatial(h, rates);
          const auto sw = oracle::spatial(w, h, rates);
          CHECK(sp.isolated == !sw.has_value());
          if (sw) CHECK(std::abs(sp.value - *sw) <= 1e-12 * std::max(1.0, std::abs(*sw)));
        }
      }
    }
  }
}

TEST_CASE("lags scale linearly with rates") {
  std::mt19937_64 g(5);
  const auto w = oracle::random_world(g, 15, 2);
  auto rates = oracle::rates_at(w.panel, 0);
  const ExposureEngine eng(w.regions, w.network, w.contiguity);
  auto scaled = rates;
  for (auto& r : scaled) r *= 4.0;  // power of two keeps the products exact
  for (std::size_t h = 0; h < 15; ++h) {
    const auto a = eng.network(h, rates);
    if (a) CHECK(*eng.network(h, scaled) == 4.0 * *a);
    CHECK(eng.spatial(h, scaled).value == 4.0 * eng.spatial(h, rates).value);
  }
}

TEST_CASE("lag columns on a 2 region 2 period panel") {
  const std::vector<RegionId> regions{R("A"), R("B")};
  Eigen::MatrixXd cases(2, 2);
  cases << 10, 30, 20, 5;
  Eigen::VectorXd pop(2);
  pop << 1000, 2000;
  const Panel panel = oracle::make_panel(regions, cases, pop);
  const FlowNetwork net({{R("A"), R("B"), 3}, {R("B"), R("A"), 1}, {R("A"), R("A"), 9}});
  ContiguityGraph::Adjacency adj{{R("A"), {R("B")}}, {R("B"), {R("A")}}};
  const LagColumnSet lags = build_lag_columns(panel, net, ContiguityGraph(adj));
  // rates: A = [1000, 3000], B = [1000, 250]
  CHECK(std::isnan(lags.network_lag(0, 0)));
  CHECK(lags.network_lag(0, 1) == 1000.0);
  CHECK(lags.network_lag(1, 1) == 1000.0);
  CHECK(lags.network_delta(0, 1) == -750.0);
  CHECK(lags.network_delta(1, 1) == 2000.0);
  CHECK(lags.spatial_lag(0, 1) == 1000.0);
  CHECK(lags.spatial_delta(1, 1) == 2000.0);
  CHECK(lags.own_rate_lag(0, 1) == 1000.0);
  CHECK_FALSE(lags.isolated[0]);
  CHECK(lags == build_lag_columns(panel, net, ContiguityGraph(adj)));
}

TEST_CASE("identical rates give identical lags") {
  const std::vector<RegionId> regions{R("A"), R("B"), R("C")};
  Eigen::MatrixXd cases = Eigen::MatrixXd::Constant(3, 3, 50);
  Eigen::VectorXd pop = Eigen::VectorXd::Constant(3, 5000);
  const Panel panel = oracle::make_panel(regions, cases, pop);
  const FlowNetwork net({{R("A"), R("B"), 3}, {R("B"), R("C"), 1}, {R("C"), R("A"), 9},
                         {R("C"), R("B"), 2}});
  ContiguityGraph::Adjacency adj{{R("A"), {R("B")}}, {R("B"), {R("A"), R("C")}}, {R("C"), {R("B")}}};
  const auto lags = build_lag_columns(panel, net, ContiguityGraph(adj));
  for (Eigen::Index r = 0; r < 3; ++r) {
    for (Eigen::Index t = 1; t < 3; ++t) {
      CHECK(lags.network_lag(r, t) == 1000.0);
      CHECK(lags.spatial_lag(r, t) == 1000.0);
      CHECK(lags.own_rate_lag(r, t) == 1000.0);
    }
  }
}

TEST_CASE("contiguous filter with no contiguous destination flags missing") {
  const std::vector<RegionId> regions{R("A"), R("B"), R("C")};
  const Panel panel =
      oracle::make_panel(regions, Eigen::MatrixXd::Constant(3, 2, 5), Eigen::VectorXd::Constant(3, 100));
  const FlowNetwork net({{R("A"), R("C"), 3}, {R("B"), R("A"), 1}});
  ContiguityGraph::Adjacency adj{{R("A"), {R("B")}}, {R("B"), {R("A")}}, {R("C"), {}}};
  const auto lags = build_lag_columns(panel, net, ContiguityGraph(adj),
                                      {.filter = NetworkFilter::contiguous_only});
  CHECK(lags.network_missing(0, 1));
  CHECK(std::isnan(lags.network_lag(0, 1)));
  CHECK_FALSE(lags.network_missing(1, 1));
  CHECK(lags.isolated[2]);
  CHECK(lags.spatial_lag(2, 1) == 0.0);
}

TEST_CASE("cross-sectional lags use cumulative rates") {
  const std::vector<RegionId> regions{R("A"), R("B")};
  Eigen::MatrixXd cases(2, 2);
  cases << 10, 30, 20, 5;
  Eigen::VectorXd pop(2);
  pop << 1000, 2000;
  const Panel panel = oracle::make_panel(regions, cases, pop);
  const FlowNetwork net({{R("A"), R("B"), 3}});
  ContiguityGraph::Adjacency adj{{R("A"), {}}, {R("B"), {}}};
  const auto lags = build_lag_columns(panel, net, ContiguityGraph(adj), {}, Mode::cross_sectional);
  REQUIRE(lags.period_labels.size() == 1);
  CHECK(lags.network_lag(0, 0) == 1250.0);
  CHECK(lags.own_rate_lag(0, 0) == 4000.0);
  CHECK(std::isnan(lags.network_delta(0, 0)));
  CHECK(lags.network_missing(1, 0));
}
