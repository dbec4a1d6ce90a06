#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "netspill/ingest.hpp"
#include "netspill/rng.hpp"
#include "netspill/types.hpp"

namespace netspill {

// Regions sit on a square grid (row-major) with queen contiguity; groups are
// consecutive runs of `regions_per_group` regions. Period 0 is a warm-up
// whose lag predictors are 0; later periods use the realized rates of the
// previous period through the exposure operators.
struct SimConfig {
  int n_groups = 40;
  int regions_per_group = 25;
  int n_periods = 11;
  Date start = Date{std::chrono::year{2020} / 3 / 1};
  int period_days = 14;

  // Flows: every contiguous neighbor, plus Poisson(far_links) random distant
  // destinations, plus a self-flow; commuter counts are rounded log-normal.
  double far_links = 3.0;
  double flow_log_mean = 5.0;
  double flow_log_sd = 1.0;
  double contiguous_log_boost = 1.0;
  double self_flow_log_mean = 8.0;

  double pop_log_mean = 10.8;  // ~ 50,000
  double pop_log_sd = 0.8;
  std::vector<std::string> covariates{"x1", "x2"};  // iid N(0, 1) per region

  // Coefficients by predictor name: lag columns (network_lag, spatial_lag,
  // own_rate_lag, rates per 100,000) or covariate names.
  std::vector<std::pair<std::string, double>> beta{
      {"network_lag", 0.0005}, {"spatial_lag", 0.0003}, {"x1", 0.3}, {"x2", -0.2}};
  double baseline_rate = 0.0005;  // cases per person per period at zero predictors
  double alpha = 0.8;
  double sigma2_group = 0.3;
  double sigma2_region = 0.5;
  double death_fraction = 0.02;
  std::uint64_t seed = 1;
};

struct SimTruth {
  double intercept = 0.0;  // log(baseline_rate)
  std::vector<std::pair<std::string, double>> beta;
  double alpha = 0.0;
  double sigma2_group = 0.0;
  double sigma2_region = 0.0;
  Eigen::VectorXd group_effects;
  Eigen::VectorXd region_effects;
};

struct SimResult {
  Panel panel;
  FlowNetwork flows;
  ContiguityGraph contiguity;
  SimTruth truth;
  RawCumulativeSeries raw;  // cumulative series at the period boundary dates
  CovariateTable covariates;
  PeriodScheme scheme;
};

// NB2 draw with mean mu and Var = mu + alpha mu^2 as a gamma-Poisson
// mixture; alpha == 0 gives a Poisson draw.
double sample_nb(rng::Engine& eng, double mu, double alpha);

void validate(const SimConfig& config);

// Deterministic for a given config (including seed).
SimResult generate(const SimConfig& config);

// Writes cases.csv, covariates.csv, flows.csv, contiguity.csv and
// truth.json in the ingest schemas.
void write_dataset(const SimResult& sim, const SimConfig& config,
                   const std::filesystem::path& dir,
                   const std::vector<std::pair<std::string, std::string>>& provenance);

// Flat key=value rendering of the config (also used for provenance).
std::vector<std::pair<std::string, std::string>> describe(const SimConfig& config);

}  // namespace netspill
