#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "netspill/design.hpp"

namespace netspill {

enum class ClusterLevel { observation, group, region };

std::string_view to_string(ClusterLevel c);

enum class FitStatus { converged, max_iterations, failed };

std::string_view to_string(FitStatus s);

struct Convergence {
  int iterations = 0;
  double gradient_norm = NAN;  // infinity norm at the final iterate
  double max_change = NAN;     // last parameter change (GLM)
  FitStatus status = FitStatus::failed;
};

struct VarianceComponent {
  std::string level;
  double variance = 0.0;
  double se = NAN;  // delta method from log-variance; NaN at the boundary
  bool at_boundary = false;
  bool identified = true;
};

struct FitOptions {
  int max_iterations = 200;  // GLM outer iterations; the mixed fit allows 5x
  double tolerance = 1e-8;   // GLM: max absolute parameter change
  double gradient_tolerance = 1e-6;  // mixed: outer gradient infinity norm
  double init_ln_alpha = -0.6931471805599453;     // ln 0.5
  double init_log_variance = -2.302585092994046;  // ln 0.1
  double ridge = 1e-8;
  // Defaults to the top random level for mixed fits and to observations for
  // fixed-effect fits.
  std::optional<ClusterLevel> cluster;
};

struct FitResult {
  std::vector<std::string> terms;
  Eigen::VectorXd beta;
  Eigen::VectorXd se;         // model based (inverse observed information)
  Eigen::VectorXd robust_se;  // clustered sandwich
  Eigen::VectorXd z;          // beta / robust_se
  Eigen::VectorXd p;          // two-sided normal p-values from z
  double ln_alpha = 0.0;
  double ln_alpha_se = NAN;
  double ln_alpha_robust_se = NAN;
  bool alpha_at_boundary = false;
  std::vector<VarianceComponent> variance_components;  // outermost first
  double loglik = NAN;
  Eigen::VectorXd mu;  // fixed-effects-only fitted means
  // Random-effect modes keyed by panel index; empty for fixed-effect fits.
  Eigen::VectorXd group_modes;
  Eigen::VectorXd region_modes;
  // Covariances over the free parameters (beta, ln_alpha, log variances),
  // named in `covariance_terms`.
  std::vector<std::string> covariance_terms;
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd robust_covariance;
  ClusterLevel cluster = ClusterLevel::observation;
  std::size_t n_clusters = 0;
  std::size_t n_obs = 0;
  Convergence convergence;
  std::vector<std::string> notes;

  bool converged() const noexcept { return convergence.status == FitStatus::converged; }
};

// NB2 regression with log link and offset. Alternates a Newton step for beta
// with a safeguarded Newton step for ln(alpha) until the largest parameter
// change is below `options.tolerance`. Prior weights in the design multiply
// each observation's log-likelihood.
FitResult fit_nb_glm(const DesignTable& design, const FitOptions& options = {});

// Random-intercept NB2 model with one ({group}) or two nested ({group,
// region}) Gaussian levels. The marginal likelihood is the Laplace
// approximation; the outer problem over (beta, ln alpha, log variances) is
// solved by bounded BFGS on the analytic gradient.
FitResult fit_nb_mixed(const DesignTable& design, const std::vector<std::string>& random_levels,
                       const FitOptions& options = {});

// Dispatches on random levels (empty -> GLM).
FitResult fit_model(const DesignTable& design, const std::vector<std::string>& random_levels,
                    const FitOptions& options = {});

// Sandwich A^-1 B A^-1 for the fixed effects of a fixed-effect fit, with B
// summed from per-cluster scores and scaled by G/(G-1).
Eigen::VectorXd robust_se(const FitResult& fit, const DesignTable& design,
                          ClusterLevel cluster);

// exp(x beta + offset). With `include_modes`, adds the estimated random
// intercepts of each row's group and region.
Eigen::VectorXd predict_mu(const FitResult& fit, const DesignTable& design,
                           bool include_modes = false);

// Lower-level pieces, exposed for verification.
namespace nb {

// Log-likelihood and score (d/d beta, d/d ln alpha) of the fixed-effect model.
double glm_loglik(const DesignTable& d, const Eigen::VectorXd& beta, double ln_alpha);
Eigen::VectorXd glm_score(const DesignTable& d, const Eigen::VectorXd& beta, double ln_alpha);
// Observed information over (beta, ln alpha).
Eigen::MatrixXd glm_information(const DesignTable& d, const Eigen::VectorXd& beta,
                                double ln_alpha);

// Parameter vector layout: beta, ln alpha, log var(group)[, log var(region)].
struct LaplaceValue {
  double loglik = 0.0;
  Eigen::VectorXd gradient;
};
LaplaceValue laplace_loglik(const DesignTable& d, const std::vector<std::string>& levels,
                            const Eigen::VectorXd& theta, bool with_gradient = true);

}  // namespace nb

// Throws RankDeficiencyError naming each dependent column and the columns it
// is a combination of.
void check_full_rank(const Eigen::MatrixXd& x, const std::vector<std::string>& names);

double normal_two_sided_p(double z);

}  // namespace netspill
