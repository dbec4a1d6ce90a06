#pragma once

#include <cmath>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "netspill/design.hpp"
#include "netspill/nb_likelihood.hpp"

// Independent references for the random-intercept marginal likelihood.
namespace laplace_oracle {

// Dense Laplace approximation: per group, Newton on the full vector of group
// and region intercepts, then h(v) + 0.5 log|P| - 0.5 log|H|.
inline double dense_laplace(const netspill::DesignTable& d, bool two_level,
                            const Eigen::VectorXd& theta) {
  const Eigen::Index p = d.cols();
  const Eigen::VectorXd beta = theta.head(p);
  const double a = std::exp(theta[p]);
  const double vg = std::exp(theta[p + 1]);
  const double vr = two_level ? std::exp(theta[p + 2]) : 0.0;
  const Eigen::VectorXd eta0 = d.x * beta + d.offset;

  std::map<int, std::vector<Eigen::Index>> rows_of;
  for (Eigen::Index i = 0; i < d.rows(); ++i) rows_of[d.group[static_cast<std::size_t>(i)]].push_back(i);

  double total = 0.0;
  for (const auto& [g, rows] : rows_of) {
    std::map<int, int> slot;  // region -> position in v
    if (two_level) {
      for (auto i : rows) slot.emplace(d.region[static_cast<std::size_t>(i)], 0);
      int k = 1;
      for (auto& [r, s] : slot) s = k++;
    }
    const int m = 1 + static_cast<int>(slot.size());
    Eigen::VectorXd prec(m);
    prec[0] = 1.0 / vg;
    for (int j = 1; j < m; ++j) prec[j] = 1.0 / vr;

    auto zrow = [&](Eigen::Index i) {
      Eigen::VectorXd z = Eigen::VectorXd::Zero(m);
      z[0] = 1.0;
      if (two_level) z[slot.at(d.region[static_cast<std::size_t>(i)])] = 1.0;
      return z;
    };
    auto h = [&](const Eigen::VectorXd& v) {
      double s = -0.5 * v.dot(prec.asDiagonal() * v);
      for (auto i : rows) s += netspill::nb::log_density(d.y[i], eta0[i] + zrow(i).dot(v), a);
      return s;
    };
    auto derivs = [&](const Eigen::VectorXd& v, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
      grad = -(prec.asDiagonal() * v);
      hess = Eigen::MatrixXd(prec.asDiagonal());
      for (auto i : rows) {
        const Eigen::VectorXd z = zrow(i);
        const double mu = std::exp(eta0[i] + z.dot(v));
        const double y = d.y[i];
        grad += z * ((y - mu) / (1 + a * mu));
        hess += z * z.transpose() * (mu * (1 + a * y) / ((1 + a * mu) * (1 + a * mu)));
      }
    };
    Eigen::VectorXd v = Eigen::VectorXd::Zero(m), grad;
    Eigen::MatrixXd hess;
    for (int it = 0; it < 200; ++it) {
      derivs(v, grad, hess);
      Eigen::VectorXd step = hess.ldlt().solve(grad);
      double t = 1.0;
      const double base = h(v);
      while (h(v + t * step) < base && t > 1e-10) t *= 0.5;
      v += t * step;
      if ((t * step).cwiseAbs().maxCoeff() < 1e-13) break;
    }
    derivs(v, grad, hess);
    total += h(v) + 0.5 * prec.array().log().sum() - 0.5 * std::log(hess.determinant());
  }
  return total;
}

// Gauss-Hermite nodes and weights for weight function exp(-x^2) by the
// Golub-Welsch eigenvalue method.
inline void gauss_hermite(int n, Eigen::VectorXd& x, Eigen::VectorXd& w) {
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) j(k, k - 1) = j(k - 1, k) = std::sqrt(k / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
  x = es.eigenvalues();
  w = std::sqrt(M_PI) * es.eigenvectors().row(0).transpose().array().square();
}

// One-level marginal log-likelihood by 64-node Gauss-Hermite quadrature.
inline double gauss_hermite_1level(const netspill::DesignTable& d, const Eigen::VectorXd& theta,
                                   int nodes = 64) {
  const Eigen::Index p = d.cols();
  const Eigen::VectorXd beta = theta.head(p);
  const double a = std::exp(theta[p]);
  const double sd = std::exp(0.5 * theta[p + 1]);
  const Eigen::VectorXd eta0 = d.x * beta + d.offset;
  Eigen::VectorXd x, w;
  gauss_hermite(nodes, x, w);
  std::map<int, std::vector<Eigen::Index>> rows_of;
  for (Eigen::Index i = 0; i < d.rows(); ++i) rows_of[d.group[static_cast<std::size_t>(i)]].push_back(i);
  double total = 0.0;
  for (const auto& [g, rows] : rows_of) {
    std::vector<double> terms;
    double mx = -INFINITY;
    for (int k = 0; k < nodes; ++k) {
      const double u = std::sqrt(2.0) * sd * x[k];
      double s = std::log(w[k] / std::sqrt(M_PI));
      for (auto i : rows) s += netspill::nb::log_density(d.y[i], eta0[i] + u, a);
      terms.push_back(s);
      mx = std::max(mx, s);
    }
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - mx);
    total += mx + std::log(acc);
  }
  return total;
}

}  // namespace laplace_oracle
