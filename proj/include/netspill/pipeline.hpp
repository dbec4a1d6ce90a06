#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "netspill/causal.hpp"
#include "netspill/exposure.hpp"
#include "netspill/ingest.hpp"
#include "netspill/negbin.hpp"
#include "netspill/simulate.hpp"
#include "netspill/types.hpp"

namespace netspill {

// Resolved run configuration. The flat config file uses the same keys as
// `set_option`; command-line flags are applied after the file.
struct RunConfig {
  std::filesystem::path cases;
  std::filesystem::path covariates;
  std::filesystem::path flows;
  std::filesystem::path contiguity;
  std::filesystem::path lags;  // optional precomputed exposures for `fit`
  std::filesystem::path out = ".";

  std::optional<Date> start;  // defaults to the day after the first date in the cases file
  int period_days = 14;
  int n_periods = 0;  // 0: every complete period covered by the cases file
  UnknownRegionPolicy unknown_regions = UnknownRegionPolicy::fail;

  ModelSpec model;
  NetworkFilter network_filter = NetworkFilter::all;
  bool include_self_flows = false;

  int permutations = 100;
  std::uint64_t seed = 0;
  std::string permute_predictor;  // default: first predictor
  bool permute_within_period = false;

  std::vector<WeightMethod> causal_methods{WeightMethod::iptw, WeightMethod::cbps,
                                           WeightMethod::super_learner};
  // Treatment spec: a covariate or lag name (continuous), "above_average:<col>"
  // or "threshold:<col>:<cutoff>" (binary).
  std::string causal_treatment;
  std::vector<std::string> causal_confounders;  // default: every other covariate
  std::vector<std::string> causal_controls;     // outcome-regression controls

  SimConfig sim;
};

RunConfig default_run_config();

// Applies one key=value setting; throws ConfigError for unknown keys or bad
// values.
void set_option(RunConfig& cfg, const std::string& key, const std::string& value);
void load_config_file(RunConfig& cfg, const std::filesystem::path& path);

// Every resolved setting as key=value pairs (written into each artifact).
std::vector<std::pair<std::string, std::string>> resolved(const RunConfig& cfg);

struct LoadedInputs {
  Panel panel;
  FlowNetwork flows;
  ContiguityGraph contiguity;
  std::vector<std::string> warnings;
};

LoadedInputs load_inputs(const RunConfig& cfg);

// In-memory stages shared by the CLI and the tests.
LagColumnSet compute_exposures(const RunConfig& cfg, const Panel& panel, const FlowNetwork& flows,
                               const ContiguityGraph& contiguity);
FitResult fit_stage(const RunConfig& cfg, const Panel& panel, const LagColumnSet& lags,
                    DesignTable* design_out = nullptr);

// Subcommands. Each writes its artifacts into cfg.out and returns their
// paths.
std::vector<std::filesystem::path> run_simulate(const RunConfig& cfg);
std::vector<std::filesystem::path> run_ingest(const RunConfig& cfg);
std::vector<std::filesystem::path> run_exposures(const RunConfig& cfg);
std::vector<std::filesystem::path> run_fit(const RunConfig& cfg);
std::vector<std::filesystem::path> run_permute(const RunConfig& cfg);
std::vector<std::filesystem::path> run_causal(const RunConfig& cfg);
std::vector<std::filesystem::path> run_report(const RunConfig& cfg);

// Serialized fit artifact for a resolved config (what `fit` writes to fit.csv).
std::string fit_csv_text(const RunConfig& cfg, const FitResult& fit);

}  // namespace netspill
