#include "netspill/logistic.hpp"

#include <cmath>

#include "netspill/errors.hpp"

namespace netspill::glm {

namespace {

double bernoulli_ll(const Eigen::VectorXd& t, const Eigen::VectorXd& eta) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    // log(1 + e^eta) computed stably
    const double e = eta[i];
    const double sp = e > 0.0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    s += t[i] * e - sp;
  }
  return s;
}

}  // namespace

LogisticFit logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& t) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  LogisticFit f;
  f.beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
  double ll = bernoulli_ll(t, eta);
  for (int it = 1; it <= 100; ++it) {
    f.iterations = it;
    Eigen::VectorXd mu = eta.unaryExpr([](double e) { return expit(e); });
    const Eigen::VectorXd w = (mu.array() * (1.0 - mu.array())).max(1e-300);
    const Eigen::VectorXd g = x.transpose() * (t - mu);
    const Eigen::MatrixXd h = x.transpose() * (x.array().colwise() * w.array()).matrix();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    if (ldlt.info() != Eigen::Success) break;
    Eigen::VectorXd step = ldlt.solve(g);
    Eigen::VectorXd nb = f.beta + step;
    Eigen::VectorXd ne = x * nb;
    double nll = bernoulli_ll(t, ne);
    for (int half = 0; half < 40 && !(nll >= ll); ++half) {
      step *= 0.5;
      nb = f.beta + step;
      ne = x * nb;
      nll = bernoulli_ll(t, ne);
    }
    if (!(nll >= ll)) break;
    f.beta = nb;
    eta = ne;
    const double change = step.cwiseAbs().maxCoeff();
    ll = nll;
    if (change < 1e-10 || (std::abs(nll - ll) < 1e-14 && change < 1e-8)) {
      f.converged = true;
      break;
    }
  }
  f.loglik = ll;
  f.fitted = eta.unaryExpr([](double e) { return expit(e); });
  const double lo = f.fitted.minCoeff();
  const double hi = f.fitted.maxCoeff();
  if (!f.converged || lo < 1e-10 || hi > 1.0 - 1e-10 || f.beta.cwiseAbs().maxCoeff() > 1e3) {
    throw PositivityError("treatment is (quasi-)separable by the covariates; propensities reach 0 or 1");
  }
  return f;
}

LinearFit linear(const Eigen::MatrixXd& x, const Eigen::VectorXd& t) {
  LinearFit f;
  const auto qr = x.colPivHouseholderQr();
  if (qr.rank() < x.cols()) throw RankDeficiencyError({"propensity covariates"});
  f.beta = qr.solve(t);
  f.fitted = x * f.beta;
  const double dof = static_cast<double>(x.rows() - x.cols());
  if (dof <= 0.0) throw DataError("too few rows for the linear propensity model");
  f.sigma2 = (t - f.fitted).squaredNorm() / dof;
  if (!(f.sigma2 > 0.0)) throw PositivityError("treatment is an exact linear function of the covariates");
  return f;
}

}  // namespace netspill::glm
