#pragma once

#include <cmath>

#include <Eigen/Dense>

// Small regression helpers for propensity models. Design matrices include
// their own intercept column.
namespace netspill::glm {

struct LogisticFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd fitted;  // probabilities
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Newton-Raphson with step halving. Throws PositivityError when the classes
// are (quasi-)separable, detected as fitted probabilities within 1e-10 of 0
// or 1 or diverging coefficients.
LogisticFit logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& t);

struct LinearFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd fitted;
  double sigma2 = 0.0;  // residual variance, divisor n - p
};

LinearFit linear(const Eigen::MatrixXd& x, const Eigen::VectorXd& t);

inline double expit(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace netspill::glm
