#include <cmath>
#include <vector>

#include "doctest.h"
#include "netspill/errors.hpp"
#include "netspill/exposure.hpp"
#include "netspill/ingest.hpp"
#include "netspill/simulate.hpp"
#include "test_util.hpp"

using namespace netspill;

namespace {

SimConfig small_config() {
  SimConfig c;
  c.n_groups = 4;
  c.regions_per_group = 9;
  c.n_periods = 4;
  c.seed = 17;
  return c;
}

}  // namespace

TEST_CASE("negative binomial sampler moments") {
  auto eng = rng::engine(123, 99);
  const double mu = 6.0, alpha = 0.8;
  const int n = 100000;
  std::vector<double> x(n);
  double s = 0;
  for (auto& v : x) {
    v = sample_nb(eng, mu, alpha);
    s += v;
  }
  const double mean = s / n;
  double m2 = 0, m4 = 0;
  for (double v : x) {
    m2 += (v - mean) * (v - mean);
    m4 += std::pow(v - mean, 4);
  }
  const double var = m2 / (n - 1);
  m4 /= n;
  const double want_var = mu + alpha * mu * mu;
  CHECK(std::abs(mean - mu) < 3 * std::sqrt(want_var / n));
  CHECK(std::abs(var - want_var) < 3 * std::sqrt((m4 - var * var) / n));

  auto e2 = rng::engine(5, 99);
  double ps = 0;
  for (int i = 0; i < n; ++i) ps += sample_nb(e2, 3.0, 0.0);
  CHECK(std::abs(ps / n - 3.0) < 3 * std::sqrt(3.0 / n));
}

TEST_CASE("generation is deterministic for a seed") {
  const auto c = small_config();
  const auto a = generate(c);
  const auto b = generate(c);
  CHECK(a.panel == b.panel);
  CHECK(a.flows == b.flows);
  CHECK(a.contiguity == b.contiguity);
  CHECK(a.truth.region_effects == b.truth.region_effects);
  auto c2 = c;
  c2.seed = 18;
  CHECK_FALSE(generate(c2).panel == a.panel);
}

TEST_CASE("generated structure") {
  const auto c = small_config();
  const auto s = generate(c);
  CHECK(s.panel.n_regions() == 36);
  CHECK(s.panel.n_periods() == 4);
  CHECK(s.panel.n_groups() == 4);
  CHECK(s.panel.group()[10] == 1);
  // 6x6 grid: a corner has 3 queen neighbors, an interior cell 8
  CHECK(s.contiguity.neighbors(s.panel.regions()[0]).size() == 3);
  CHECK(s.contiguity.neighbors(s.panel.regions()[7]).size() == 8);
  // every region keeps a positive outflow and the exposure invariants hold
  const ExposureEngine eng(s.panel.regions(), s.flows, s.contiguity);
  const Eigen::MatrixXd rates = case_rates(s.panel);
  for (std::size_t h = 0; h < 36; ++h) {
    double sum = 0;
    for (double w : eng.network_weights(h)) sum += w;
    CHECK(std::abs(sum - 1.0) < 1e-12);
    const std::span<const double> r(rates.col(0).data(), 36);
    const double v = *eng.network(h, r);
    CHECK(v >= rates.col(0).minCoeff());
    CHECK(v <= rates.col(0).maxCoeff());
  }
}

TEST_CASE("Poisson reduction without random effects or overdispersion") {
  SimConfig c = small_config();
  c.n_groups = 20;
  c.regions_per_group = 25;
  c.n_periods = 2;
  c.alpha = 0.0;
  c.sigma2_group = 0.0;
  c.sigma2_region = 0.0;
  c.beta = {{"x1", 0.3}, {"x2", -0.2}};
  const auto s = generate(c);
  // Pearson statistic at the true means is approximately chi-square(N).
  double pearson = 0;
  const auto& x1 = *s.panel.covariate("x1");
  const auto& x2 = *s.panel.covariate("x2");
  for (Eigen::Index k = 0; k < 500; ++k) {
    const double mu = s.panel.population()[k] * c.baseline_rate * std::exp(0.3 * x1[k] - 0.2 * x2[k]);
    for (Eigen::Index t = 0; t < 2; ++t) {
      const double y = s.panel.cases()(k, t);
      pearson += (y - mu) * (y - mu) / mu;
    }
  }
  CHECK(std::abs(pearson - 1000.0) < 4 * std::sqrt(2000.0));
}

TEST_CASE("invalid configurations fail before sampling") {
  auto c = small_config();
  c.alpha = -1;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = small_config();
  c.beta = {{"x1", 40.0}};
  CHECK_THROWS_AS(generate(c), ConfigError);
  c = small_config();
  c.beta = {{"network_delta", 0.1}};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = small_config();
  c.beta = {{"zzz", 0.1}};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = small_config();
  c.beta = {{"own_rate_lag", 1.0}};
  CHECK_THROWS_AS(generate(c), DataError);
}

TEST_CASE("written dataset round-trips through ingest") {
  const auto c = small_config();
  const auto s = generate(c);
  testutil::TempDir dir;
  write_dataset(s, c, dir.path(), describe(c));
  const auto raw = parse_cases(dir / "cases.csv");
  const auto cov = parse_covariates(dir / "covariates.csv");
  const auto built = build_panel(raw, cov, s.scheme);
  CHECK(built.panel == s.panel);
  CHECK(parse_flows(dir / "flows.csv").network == s.flows);
  CHECK(parse_contiguity(dir / "contiguity.csv").graph == s.contiguity);
  CHECK(testutil::read_file(dir / "truth.json").find("\"alpha\"") != std::string::npos);
  CHECK(testutil::read_file(dir / "cases.csv").rfind("# ", 0) == 0);
}
