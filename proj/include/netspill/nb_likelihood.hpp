#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

// NB2 log-likelihood pieces, mean mu = exp(eta), Var = mu + alpha mu^2,
// parameterized by tau = ln(alpha). Per observation
//
//   ll = A(y, alpha) + y eta - (y + 1/alpha) log1p(alpha mu) - lgamma(y + 1)
//   A(y, alpha) = lgamma(y + 1/alpha) - lgamma(1/alpha) - y log(1/alpha)
//               = sum_{j<y} log1p(j alpha)
//
// which stays finite and accurate as alpha -> 0 (the Poisson limit).
namespace netspill::nb {

inline constexpr double kMinLnAlpha = -23.025850929940457;  // ln 1e-10
inline constexpr double kMaxLnAlpha = 9.210340371976184;    // ln 1e4

// Count-only terms summed over observations through the tail counts
// N_j = sum_i w_i [y_i > j], so the cost is O(max y) rather than O(sum y).
class CountTerms {
 public:
  CountTerms(std::span<const double> y, std::span<const double> weights);

  double log_ratio(double alpha) const;    // sum_i w_i A(y_i, alpha)
  double tau_score(double alpha) const;    // alpha * dA/dalpha, summed
  double tau_curvature(double alpha) const;  // d/dtau of tau_score
  double log_factorial() const noexcept { return log_factorial_; }  // sum w lgamma(y+1)

 private:
  std::vector<double> tail_;  // N_j
  double log_factorial_ = 0.0;
};

// Single-observation A(y, alpha) and alpha dA/dalpha.
double log_ratio(double y, double alpha);
double log_ratio_tau_score(double y, double alpha);

double log_density(double y, double eta, double alpha);

// Terms that depend on eta for one observation.
struct EtaTerms {
  double rest;     // y eta - (y + 1/alpha) log1p(alpha mu)
  double d1;       // d ll / d eta
  double w;        // -d2 ll / d eta2  (> 0)
  double w_eta;    // d w / d eta
  double tau;      // d rest / d tau
  double tau_tau;  // d2 rest / d tau2
  double d1_tau;   // d2 ll / d eta d tau
  double w_tau;    // d w / d tau
};

EtaTerms eta_terms(double y, double eta, double alpha);

// Poisson-limit helper D(x) = log1p(x)/x - 1/(1+x) and its derivative.
double dfun(double x);
double dfun_prime(double x);

// eta = X beta + offset, evaluated column-wise with the vector kernels.
Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta,
                                 const Eigen::VectorXd& offset);

}  // namespace netspill::nb
