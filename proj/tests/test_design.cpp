#include <cmath>

#include "doctest.h"
#include "exposure_oracle.hpp"
#include "netspill/design.hpp"
#include "netspill/errors.hpp"

using namespace netspill;

namespace {

Panel toy_panel() {
  PanelData d;
  d.regions = {RegionId("A"), RegionId("B")};
  const Date start{std::chrono::year{2020} / 4 / 1};
  for (int t = 0; t < 3; ++t) {
    const auto first = start + std::chrono::days{14 * t};
    const auto last = first + std::chrono::days{13};
    d.periods.push_back({period_label(first, last), first, last});
  }
  d.signed_cases = Eigen::MatrixXd(2, 3);
  d.signed_cases << 10, 20, 30, 40, 50, 60;
  d.cases = d.signed_cases;
  d.deaths = Eigen::MatrixXd(2, 3);
  d.deaths << 1, 2, 3, 4, 5, 6;
  d.population = Eigen::Vector2d(1000, 4000);
  Eigen::VectorXd x(2);
  x << 0.5, -1.5;
  d.covariates = {{"x", x}};
  d.group_names = {"G1", "G2"};
  d.group = {0, 1};
  return Panel(std::move(d));
}

}  // namespace

TEST_CASE("design with period dummies matches a hand-built table") {
  const Panel p = toy_panel();
  ModelSpec spec;
  spec.predictors = {"x", "period"};
  const auto d = build_design(p, nullptr, spec);
  REQUIRE(d.columns.size() == 4);
  CHECK(d.columns[0] == "_cons");
  CHECK(d.columns[1] == "x");
  CHECK(d.columns[2] == "period:" + p.periods()[1].label);
  CHECK(d.columns[3] == "period:" + p.periods()[2].label);

  Eigen::MatrixXd want(6, 4);
  Eigen::VectorXd y(6), off(6);
  int i = 0;
  for (int r = 0; r < 2; ++r) {
    for (int t = 0; t < 3; ++t, ++i) {
      want.row(i) << 1.0, r == 0 ? 0.5 : -1.5, t == 1 ? 1.0 : 0.0, t == 2 ? 1.0 : 0.0;
      y[i] = p.deaths()(r, t);
      off[i] = std::log(p.population()[r]);
    }
  }
  CHECK(d.x == want);
  CHECK(d.y == y);
  CHECK(d.offset == off);
  CHECK(d.group == std::vector<int>{0, 0, 0, 1, 1, 1});
  CHECK(d.period == std::vector<int>{0, 1, 2, 0, 1, 2});
  CHECK(d == build_design(p, nullptr, spec));
}

TEST_CASE("lag predictors drop the first period and shift the reference") {
  const Panel p = toy_panel();
  ContiguityGraph::Adjacency adj{{RegionId("A"), {RegionId("B")}}, {RegionId("B"), {RegionId("A")}}};
  const FlowNetwork net({{RegionId("A"), RegionId("B"), 5}, {RegionId("B"), RegionId("A"), 5}});
  const auto lags = build_lag_columns(p, net, ContiguityGraph(adj));
  ModelSpec spec;
  spec.outcome = Outcome::cases;
  spec.predictors = {"network_lag", "period"};
  const auto d = build_design(p, &lags, spec);
  CHECK(d.rows() == 4);
  CHECK(d.dropped_rows == 2);
  REQUIRE(d.columns.size() == 3);
  CHECK(d.columns[2] == "period:" + p.periods()[2].label);
  CHECK(d.x(0, 1) == 40.0 / 4000.0 * 1e5);
  CHECK(d.y[0] == 20.0);
}

TEST_CASE("design errors") {
  const Panel p = toy_panel();
  ModelSpec spec;
  spec.predictors = {"foo"};
  try {
    build_design(p, nullptr, spec);
    FAIL("expected missing column");
  } catch (const MissingColumnError& e) {
    CHECK(e.column() == "foo");
    CHECK(std::string(e.what()).find("foo") != std::string::npos);
  }
  spec.predictors = {"x", "x"};
  CHECK_THROWS_AS(build_design(p, nullptr, spec), ConfigError);
  spec.predictors = {"period"};
  spec.mode = Mode::cross_sectional;
  CHECK_THROWS_AS(build_design(p, nullptr, spec), ConfigError);

  PanelData d = p.data();
  d.covariates[0].second[1] = NAN;
  const Panel bad(std::move(d));
  spec.mode = Mode::panel;
  spec.predictors = {"x"};
  try {
    build_design(bad, nullptr, spec);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("B:x") != std::string::npos);
  }
}

TEST_CASE("cross-sectional design sums outcomes") {
  const Panel p = toy_panel();
  ModelSpec spec;
  spec.mode = Mode::cross_sectional;
  spec.predictors = {"x"};
  const auto d = build_design(p, nullptr, spec);
  CHECK(d.rows() == 2);
  CHECK(d.y[0] == 6.0);
  CHECK(d.y[1] == 15.0);
  CHECK(d.period[0] == -1);
}
