#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "netspill/causal.hpp"
#include "netspill/exposure.hpp"
#include "netspill/negbin.hpp"
#include "netspill/permute.hpp"
#include "netspill/types.hpp"

namespace netspill::io {

using Provenance = std::vector<std::pair<std::string, std::string>>;

nlohmann::ordered_json provenance_json(const Provenance& p);

// Coefficient table: term, estimate, se, robust_se, z, p, followed by
// ln_alpha and variance-component rows.
void write_fit_csv(std::ostream& os, const FitResult& fit, const Provenance& p);
nlohmann::ordered_json fit_json(const FitResult& fit, const Provenance& p);

nlohmann::ordered_json permutation_json(const PermutationReport& r, const Provenance& p);

void write_causal_csv(std::ostream& os, const std::vector<CausalEstimate>& rows,
                      const Provenance& p);
nlohmann::ordered_json weights_json(const WeightSet& w);

// Long format: one row per (region, period) with every lag column; NaN as NA.
void write_lags_csv(std::ostream& os, const LagColumnSet& lags, const Provenance& p);
// Inverse of write_lags_csv; region and period order follow the file.
LagColumnSet read_lags_csv(const std::filesystem::path& path);

struct DescriptiveRow {
  std::string variable;
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;  // n - 1 divisor
  double min = 0.0;
  double max = 0.0;
};

DescriptiveRow describe_column(std::string name, const double* v, std::size_t n);
// Per-cell deaths and cases, then per-region population and covariates.
std::vector<DescriptiveRow> descriptive_statistics(const Panel& panel);
void write_descriptive_csv(std::ostream& os, const std::vector<DescriptiveRow>& rows,
                           const Provenance& p);

// JSON number, or null when not finite.
nlohmann::ordered_json number(double v);

}  // namespace netspill::io
