#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace netspill {

enum class TreatmentType { binary, continuous };
enum class WeightMethod { iptw, cbps, super_learner };

std::string_view to_string(TreatmentType t);
std::string_view to_string(WeightMethod m);
WeightMethod parse_weight_method(std::string_view s);

// Binary when every value is 0 or 1.
TreatmentType detect_treatment_type(const Eigen::VectorXd& t);

// Named confounders, one column each, no intercept.
struct Covariates {
  std::vector<std::string> names;
  Eigen::MatrixXd x;
};

struct BalanceRow {
  std::string covariate;
  // Standardized mean difference (binary) or treatment-covariate correlation
  // (continuous); unweighted and weighted.
  double unweighted = 0.0;
  double weighted = 0.0;
};

struct WeightSet {
  Eigen::VectorXd weights;  // positive, mean 1
  WeightMethod method = WeightMethod::iptw;
  std::string treatment;
  TreatmentType type = TreatmentType::binary;
  std::vector<BalanceRow> balance;
  double ess = 0.0;
  std::size_t n_truncated = 0;
  double truncation_cap = 0.0;  // weights above this (pre-normalization) were capped; 0 if none
  Eigen::VectorXd propensity;   // e(x) (binary) or conditional density (continuous)
  // Super learner only: candidate names, stacking coefficients, CV losses.
  std::vector<std::string> candidates;
  std::vector<double> stack_coefficients;
  std::vector<double> candidate_cv_loss;
  double ensemble_cv_loss = 0.0;
  // CBPS only: final moment infinity norm.
  double moment_norm = 0.0;
  std::vector<std::string> warnings;
};

struct WeightOptions {
  bool truncate = true;
  double truncate_quantile = 0.99;
};

// Stabilized inverse-propensity weights from a logistic (binary) or
// Gaussian-linear (continuous) propensity model.
WeightSet iptw_weights(const Eigen::VectorXd& treatment, std::string_view name,
                       const Covariates& covariates, const WeightOptions& options = {});

// Covariate balancing propensity score: GMM over stacked score and balance
// moments with identity weighting. Not truncated unless asked.
WeightSet cbps_weights(const Eigen::VectorXd& treatment, std::string_view name,
                       const Covariates& covariates,
                       const WeightOptions& options = {.truncate = false});

enum class Candidate { main_effects, squares, intercept_only };
std::string_view to_string(Candidate c);

struct SuperLearnerOptions {
  int folds = 5;
  std::uint64_t seed = 0;
  std::vector<Candidate> library{Candidate::main_effects, Candidate::squares,
                                 Candidate::intercept_only};
};

// Cross-validated convex stacking of propensity candidates; the ensemble
// propensity feeds the stabilized IPTW formula.
WeightSet super_learner_weights(const Eigen::VectorXd& treatment, std::string_view name,
                                const Covariates& covariates,
                                const SuperLearnerOptions& sl = {},
                                const WeightOptions& options = {});

WeightSet compute_weights(WeightMethod method, const Eigen::VectorXd& treatment,
                          std::string_view name, const Covariates& covariates,
                          std::uint64_t seed);

// Balance of each covariate under `weights`.
std::vector<BalanceRow> balance_table(const Eigen::VectorXd& treatment, TreatmentType type,
                                      const Covariates& covariates,
                                      const Eigen::VectorXd& weights);

double effective_sample_size(const Eigen::VectorXd& weights);

enum class OutcomeFamily { negative_binomial, gaussian };

struct CausalEstimate {
  std::string method;
  std::string treatment;
  double estimate = 0.0;
  double se = 0.0;  // sandwich
  double z = 0.0;
  double p = 1.0;
  bool significant = false;  // p < 0.05
};

// Weighted regression of the outcome on the treatment (and optional
// controls). negative_binomial: NB2 with `offset`; gaussian: least squares.
// The treatment coefficient is reported with a robust sandwich SE.
CausalEstimate weighted_effect(const Eigen::VectorXd& outcome, const Eigen::VectorXd& treatment,
                               const WeightSet& weights, const Covariates& controls,
                               const Eigen::VectorXd& offset, OutcomeFamily family);

}  // namespace netspill
