#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "netspill/design.hpp"
#include "netspill/negbin.hpp"

namespace netspill {

// Mean arctangent absolute percentage error, in [0, pi/2]. A zero observation
// contributes 0 when the prediction is also 0 and pi/2 otherwise.
double maape(std::span<const double> y, std::span<const double> yhat);

struct PermutationOptions {
  int n_permutations = 100;
  std::uint64_t seed = 0;
  bool within_period = false;  // shuffle only among rows of the same period
  double max_failure_fraction = 0.2;
  FitOptions fit;
  unsigned threads = 0;  // 0: hardware concurrency
};

struct PermutationReport {
  std::string predictor;
  double observed_maape = 0.0;
  std::vector<double> permuted_maapes;  // NaN where the refit failed
  double proportion_lower = 0.0;        // among successful refits
  std::size_t n_failed = 0;
  std::uint64_t seed = 0;
  int n_permutations = 0;
  bool within_period = false;
  std::vector<std::string> warnings;
};

// Refits the model with `predictor` shuffled and compares in-sample MAAPE of
// the fixed-effects-only means against the observed fit.
PermutationReport permutation_test(const DesignTable& design, const ModelSpec& spec,
                                   const std::string& predictor,
                                   const PermutationOptions& options = {});

}  // namespace netspill
