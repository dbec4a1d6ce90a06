#include "netspill/nb_likelihood.hpp"

#include <cmath>

#include "netspill/errors.hpp"
#include "netspill/kernels.hpp"

namespace netspill::nb {

CountTerms::CountTerms(std::span<const double> y, std::span<const double> weights) {
  double ymax = 0.0;
  for (double v : y) ymax = std::max(ymax, v);
  const auto top = static_cast<std::size_t>(ymax);
  std::vector<double> hist(top + 1, 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    hist[static_cast<std::size_t>(y[i])] += w;
    log_factorial_ += w * std::lgamma(y[i] + 1.0);
  }
  // N_j = weight of observations with y > j, j = 0 .. top-1
  tail_.assign(top, 0.0);
  double acc = 0.0;
  for (std::size_t k = top; k >= 1; --k) {
    acc += hist[k];
    tail_[k - 1] = acc;
  }
}

double CountTerms::log_ratio(double alpha) const {
  double s = 0.0;
  for (std::size_t j = 1; j < tail_.size(); ++j) {
    s += tail_[j] * std::log1p(static_cast<double>(j) * alpha);
  }
  return s;
}

double CountTerms::tau_score(double alpha) const {
  double s = 0.0;
  for (std::size_t j = 1; j < tail_.size(); ++j) {
    const double ja = static_cast<double>(j) * alpha;
    s += tail_[j] * ja / (1.0 + ja);
  }
  return s;
}

double CountTerms::tau_curvature(double alpha) const {
  double s = 0.0;
  for (std::size_t j = 1; j < tail_.size(); ++j) {
    const double ja = static_cast<double>(j) * alpha;
    s += tail_[j] * ja / ((1.0 + ja) * (1.0 + ja));
  }
  return s;
}

double log_ratio(double y, double alpha) {
  double s = 0.0;
  const auto n = static_cast<long>(y);
  for (long j = 1; j < n; ++j) s += std::log1p(static_cast<double>(j) * alpha);
  return s;
}

double log_ratio_tau_score(double y, double alpha) {
  double s = 0.0;
  const auto n = static_cast<long>(y);
  for (long j = 1; j < n; ++j) {
    const double ja = static_cast<double>(j) * alpha;
    s += ja / (1.0 + ja);
  }
  return s;
}

double dfun(double x) {
  if (std::abs(x) < 1e-2) {
    // sum_{k>=1} (-1)^{k+1} k/(k+1) x^k
    double term = x;
    double s = 0.0;
    for (int k = 1; k <= 9; ++k) {
      s += (k % 2 ? 1.0 : -1.0) * k / (k + 1.0) * term;
      term *= x;
    }
    return s;
  }
  return std::log1p(x) / x - 1.0 / (1.0 + x);
}

double dfun_prime(double x) {
  if (std::abs(x) < 1e-2) {
    // sum_{k>=1} (-1)^{k+1} k^2/(k+1) x^{k-1}
    double term = 1.0;
    double s = 0.0;
    for (int k = 1; k <= 9; ++k) {
      s += (k % 2 ? 1.0 : -1.0) * k * k / (k + 1.0) * term;
      term *= x;
    }
    return s;
  }
  const double opx = 1.0 + x;
  return (x / opx - std::log1p(x)) / (x * x) + 1.0 / (opx * opx);
}

EtaTerms eta_terms(double y, double eta, double alpha) {
  const double mu = std::exp(eta);
  const double x = alpha * mu;
  const double opx = 1.0 + x;
  const double l1p = std::log1p(x);
  EtaTerms t;
  // (1/alpha) log1p(alpha mu) = mu * log1p(x)/x
  const double ratio = x < 1e-8 ? 1.0 - x / 2.0 : l1p / x;
  t.rest = y * eta - y * l1p - mu * ratio;
  t.d1 = (y - mu) / opx;
  t.w = mu * (1.0 + alpha * y) / (opx * opx);
  t.w_eta = t.w * (1.0 - x) / opx;
  t.tau = mu * dfun(x) - y * x / opx;
  t.tau_tau = mu * x * dfun_prime(x) - y * x / (opx * opx);
  t.d1_tau = -x * (y - mu) / (opx * opx);
  t.w_tau = x * (y * opx - 2.0 * mu * (1.0 + alpha * y)) / (opx * opx * opx);
  return t;
}

double log_density(double y, double eta, double alpha) {
  return log_ratio(y, alpha) + eta_terms(y, eta, alpha).rest - std::lgamma(y + 1.0);
}

Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta,
                                 const Eigen::VectorXd& offset) {
  Eigen::VectorXd eta = offset;
  const auto n = static_cast<std::size_t>(x.rows());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    kernels::axpy(beta[j], {x.col(j).data(), n}, {eta.data(), n});
  }
  return eta;
}

}  // namespace netspill::nb
