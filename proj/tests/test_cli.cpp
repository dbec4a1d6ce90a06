#include <cmath>
#include <cstdlib>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "netspill/csv.hpp"
#include "netspill/errors.hpp"
#include "netspill/pipeline.hpp"
#include "netspill/serialize.hpp"
#include "test_util.hpp"

using namespace netspill;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(NETSPILL_CLI) + " " + args + " > " + (log.string() + ".out") +
                          " 2> " + (log.string() + ".err");
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string body(const std::string& csv_text) {
  std::string out, line;
  std::istringstream is(csv_text);
  while (std::getline(is, line)) {
    if (!line.empty() && line[0] == '#') continue;
    out += line + "\n";
  }
  return out;
}

const char* kSimArgs =
    " --seed 3 --set sim.n_groups=4 --set sim.regions_per_group=9 --set sim.n_periods=5";

}  // namespace

TEST_CASE("config parsing and precedence") {
  testutil::TempDir dir;
  testutil::write_file(dir / "run.cfg",
                       "# comment\noutcome = cases\npermutations=25\nseed=9\n"
                       "predictors=network_lag,x1\nrandom_levels=none\nsim.beta=x1:0.5\n");
  RunConfig c = default_run_config();
  load_config_file(c, dir / "run.cfg");
  CHECK(c.model.outcome == Outcome::cases);
  CHECK(c.permutations == 25);
  CHECK(c.seed == 9);
  CHECK(c.model.predictors == std::vector<std::string>{"network_lag", "x1"});
  CHECK(c.model.random_levels.empty());
  REQUIRE(c.sim.beta.size() == 1);
  CHECK(c.sim.beta[0].second == 0.5);
  set_option(c, "seed", "11");
  CHECK(c.seed == 11);
  CHECK_THROWS_AS(set_option(c, "bogus", "1"), ConfigError);
  CHECK_THROWS_AS(set_option(c, "permutations", "ten"), ConfigError);
  CHECK_THROWS_AS(set_option(c, "network_filter", "near"), ConfigError);
  testutil::write_file(dir / "bad.cfg", "outcome=deaths\njunk line\n");
  try {
    load_config_file(c, dir / "bad.cfg");
    FAIL("expected parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  bool has_seed = false;
  for (const auto& [k, v] : resolved(c)) has_seed |= k == "seed" && v == "11";
  CHECK(has_seed);
}

TEST_CASE("descriptive statistics on a toy panel") {
  PanelData d;
  for (const char* r : {"A", "B", "C", "D", "E"}) d.regions.emplace_back(r);
  const Date s{std::chrono::year{2020} / 4 / 1};
  d.periods = {{"p", s, s + std::chrono::days{13}}};
  d.deaths = Eigen::MatrixXd(5, 1);
  d.deaths << 1, 2, 3, 4, 10;
  d.cases = d.deaths * 10;
  d.signed_cases = d.cases;
  d.population = Eigen::VectorXd::Constant(5, 100);
  Eigen::VectorXd x(5);
  x << -1, 0, 0.5, 2, 3.5;
  d.covariates = {{"x", x}};
  d.group_names = {"G"};
  d.group.assign(5, 0);
  const auto rows = io::descriptive_statistics(Panel(std::move(d)));
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].variable == "deaths");
  CHECK(rows[0].n == 5);
  CHECK(rows[0].mean == 4.0);
  CHECK(rows[0].sd == doctest::Approx(std::sqrt(50.0 / 4.0)).epsilon(1e-15));
  CHECK(rows[0].min == 1.0);
  CHECK(rows[0].max == 10.0);
  CHECK(rows[3].variable == "x");
  CHECK(rows[3].mean == 1.0);
  CHECK(rows[3].sd == doctest::Approx(std::sqrt(12.5 / 4.0)).epsilon(1e-15));
  CHECK(rows[3].min == -1.0);
  CHECK(rows[3].max == 3.5);
}

TEST_CASE("lag table round-trips") {
  testutil::TempDir dir;
  RunConfig cfg = default_run_config();
  cfg.out = dir.path();
  cfg.seed = 3;
  cfg.sim.n_groups = 3;
  cfg.sim.regions_per_group = 4;
  cfg.sim.n_periods = 3;
  run_simulate(cfg);
  cfg.cases = dir / "cases.csv";
  cfg.covariates = dir / "covariates.csv";
  cfg.flows = dir / "flows.csv";
  cfg.contiguity = dir / "contiguity.csv";
  const auto in = load_inputs(cfg);
  CHECK(in.panel.n_periods() == 3);
  const auto lags = compute_exposures(cfg, in.panel, in.flows, in.contiguity);
  run_exposures(cfg);
  CHECK(io::read_lags_csv(dir / "lags.csv") == lags);
}

TEST_CASE("command line end to end") {
  testutil::TempDir dir;
  const fs::path d = dir.path();
  const std::string out = " --out " + d.string();
  const std::string inputs = " --cases " + (d / "cases.csv").string() + " --covariates " +
                             (d / "covariates.csv").string() + " --flows " +
                             (d / "flows.csv").string() + " --contiguity " +
                             (d / "contiguity.csv").string();
  REQUIRE(run_cli("simulate" + out + kSimArgs, d / "sim") == 0);
  CHECK(fs::exists(d / "truth.json"));
  const auto ok = nlohmann::json::parse(testutil::read_file(d / "sim.out"));
  CHECK(ok["status"] == "ok");

  REQUIRE(run_cli("ingest" + out + inputs, d / "ingest") == 0);
  CHECK(fs::exists(d / "descriptive.csv"));
  const auto ingest = nlohmann::json::parse(testutil::read_file(d / "ingest.json"));
  CHECK(ingest["n_periods"] == 5);
  CHECK(ingest["config"]["seed"] == "0");

  const std::string model = " --predictors network_lag,spatial_lag,x1 --random-levels group";
  REQUIRE(run_cli("fit" + out + inputs + model, d / "fit") == 0);
  const std::string fit1 = testutil::read_file(d / "fit.csv");
  CHECK(fit1.find("# predictors=network_lag,spatial_lag,x1") != std::string::npos);
  REQUIRE(run_cli("fit" + out + inputs + model, d / "fit") == 0);
  CHECK(testutil::read_file(d / "fit.csv") == fit1);

  REQUIRE(run_cli("exposures" + out + inputs, d / "exp") == 0);
  REQUIRE(run_cli("fit" + out + inputs + model + " --lags " + (d / "lags.csv").string(),
                  d / "fit2") == 0);
  CHECK(body(testutil::read_file(d / "fit.csv")) == body(fit1));

  REQUIRE(run_cli("permute" + out + inputs + model + " --permutations 4 --seed 2", d / "perm") ==
          0);
  const auto perm = nlohmann::json::parse(testutil::read_file(d / "permutation.json"));
  CHECK(perm["predictor"] == "network_lag");
  CHECK(perm["permuted_maapes"].size() == 4);
  CHECK(perm["config"]["seed"] == "2");

  REQUIRE(run_cli("causal" + out + inputs + " --treatment above_average:x1 --set causal_methods=iptw,cbps",
                  d / "causal") == 0);
  const std::string causal = testutil::read_file(d / "causal.csv");
  CHECK(causal.find("iptw,above_average:x1") != std::string::npos);
  CHECK(causal.find("cbps,above_average:x1") != std::string::npos);

  REQUIRE(run_cli("report" + out, d / "report") == 0);
  const std::string report = testutil::read_file(d / "report.md");
  CHECK(report.find("Permutation test") != std::string::npos);
  CHECK(report.find("Causal estimates") != std::string::npos);
}

TEST_CASE("command line errors write a machine-readable record") {
  testutil::TempDir dir;
  const fs::path d = dir.path();
  testutil::write_file(d / "cases.csv", "region,date,cum_cases,cum_deaths\nA,2020-04-01,1,0\nA,2020-04-xx,2,0\n");
  testutil::write_file(d / "cov.csv", "region,group,population\nA,G,100\n");
  const int rc = run_cli("ingest --out " + d.string() + " --cases " + (d / "cases.csv").string() +
                             " --covariates " + (d / "cov.csv").string(),
                         d / "bad");
  CHECK(rc == 2);
  const auto err = nlohmann::json::parse(testutil::read_file(d / "error.json"));
  CHECK(err["status"] == "error");
  CHECK(err["kind"] == "parse_error");
  CHECK(err["line"] == 3);
  CHECK(err["file"].get<std::string>().find("cases.csv") != std::string::npos);
  CHECK_FALSE(fs::exists(d / "descriptive.csv"));
  const auto stderr_json = nlohmann::json::parse(testutil::read_file(d / "bad.err"));
  CHECK(stderr_json["kind"] == "parse_error");

  CHECK(run_cli("fit --out " + d.string() + " --outcome births", d / "bad2") == 2);
  CHECK(nlohmann::json::parse(testutil::read_file(d / "error.json"))["kind"] == "config_error");
}
