#include <algorithm>
#include <cmath>
#include <set>

#include "netspill/errors.hpp"
#include "netspill/kernels.hpp"
#include "netspill/nb_likelihood.hpp"
#include "netspill/negbin.hpp"
#include "negbin_internal.hpp"

namespace netspill {

std::string_view to_string(ClusterLevel c) {
  switch (c) {
    case ClusterLevel::observation:
      return "observation";
    case ClusterLevel::group:
      return "group";
    case ClusterLevel::region:
      return "region";
  }
  return "observation";
}

std::string_view to_string(FitStatus s) {
  switch (s) {
    case FitStatus::converged:
      return "converged";
    case FitStatus::max_iterations:
      return "max_iterations";
    case FitStatus::failed:
      return "failed";
  }
  return "failed";
}

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

void check_full_rank(const Eigen::MatrixXd& x, const std::vector<std::string>& names) {
  const Eigen::Index p = x.cols();
  Eigen::MatrixXd xs = x;
  for (Eigen::Index j = 0; j < p; ++j) {
    const double nrm = xs.col(j).norm();
    if (nrm > 0.0) xs.col(j) /= nrm;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
  qr.setThreshold(1e-10);
  if (qr.rank() == p) return;

  std::vector<Eigen::Index> basis;
  std::set<Eigen::Index> flagged;
  std::vector<std::string> out;
  auto add = [&](Eigen::Index j) {
    if (flagged.insert(j).second) out.push_back(names[static_cast<std::size_t>(j)]);
  };
  for (Eigen::Index j = 0; j < p; ++j) {
    if (xs.col(j).norm() == 0.0) {
      add(j);
      continue;
    }
    if (basis.empty()) {
      basis.push_back(j);
      continue;
    }
    Eigen::MatrixXd b(xs.rows(), static_cast<Eigen::Index>(basis.size()));
    for (std::size_t k = 0; k < basis.size(); ++k) b.col(static_cast<Eigen::Index>(k)) = xs.col(basis[k]);
    const Eigen::VectorXd coef = b.colPivHouseholderQr().solve(xs.col(j));
    const double resid = (xs.col(j) - b * coef).norm();
    if (resid <= 1e-7) {
      for (std::size_t k = 0; k < basis.size(); ++k) {
        if (std::abs(coef[static_cast<Eigen::Index>(k)]) > 1e-7) add(basis[k]);
      }
      add(j);
    } else {
      basis.push_back(j);
    }
  }
  throw RankDeficiencyError(out);
}

namespace detail {

void validate_counts(const DesignTable& d) {
  const Eigen::Index n = d.rows();
  if (n == 0) throw DataError("design has no rows");
  if (d.y.size() != n || d.offset.size() != n || d.weights.size() != n) {
    throw DataError("design vectors do not match the row count");
  }
  if (d.columns.size() != static_cast<std::size_t>(d.cols())) {
    throw DataError("design column names do not match the matrix");
  }
  bool any_positive = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y = d.y[i];
    if (!(y >= 0.0) || y != std::floor(y) || y > 1e9) {
      throw DataError("outcome must be a nonnegative integer count (row " + std::to_string(i) +
                      ")");
    }
    if (!(d.weights[i] > 0.0) || !std::isfinite(d.weights[i])) {
      throw DataError("prior weights must be positive and finite");
    }
    if (!std::isfinite(d.offset[i])) throw DataError("offset must be finite");
    any_positive = any_positive || y > 0.0;
  }
  if (!any_positive) throw DataError("outcome is zero for every row");
  if (!d.x.allFinite()) throw DataError("design matrix has non-finite values");
}

Eigen::VectorXd xt_times(const Eigen::MatrixXd& x, const Eigen::VectorXd& v) {
  Eigen::VectorXd out(x.cols());
  const auto n = static_cast<std::size_t>(x.rows());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    out[j] = kernels::dot({x.col(j).data(), n}, {v.data(), n});
  }
  return out;
}

Eigen::MatrixXd weighted_cross(const Eigen::MatrixXd& x, const Eigen::VectorXd& w) {
  const Eigen::MatrixXd xw = x.array().colwise() * w.array();
  Eigen::MatrixXd out = x.transpose() * xw;
  return 0.5 * (out + out.transpose());
}

Eigen::MatrixXd inverse_spd(const Eigen::MatrixXd& a, double ridge, bool* ridged) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) {
    if (ridged) *ridged = false;
    return llt.solve(Eigen::MatrixXd::Identity(a.rows(), a.cols()));
  }
  if (ridged) *ridged = true;
  const double scale = std::max(1.0, a.diagonal().cwiseAbs().maxCoeff());
  Eigen::MatrixXd reg = a;
  reg.diagonal().array() += ridge * scale;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(reg);
  return ldlt.solve(Eigen::MatrixXd::Identity(a.rows(), a.cols()));
}

Eigen::VectorXd poisson_start(const DesignTable& d) {
  const Eigen::Index n = d.rows();
  const double ybar = (d.y.array() * d.weights.array()).sum() / d.weights.sum();
  Eigen::VectorXd mu = (d.y.array() + ybar) / 2.0;
  Eigen::VectorXd eta = mu.array().log();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d.cols());
  auto poisson_ll = [&](const Eigen::VectorXd& e) {
    return (d.weights.array() * (d.y.array() * e.array() - e.array().exp())).sum();
  };
  double ll = -INFINITY;
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd w = d.weights.array() * mu.array();
    const Eigen::VectorXd z = eta - d.offset + ((d.y - mu).array() / mu.array()).matrix();
    const Eigen::MatrixXd xtwx = weighted_cross(d.x, w);
    Eigen::VectorXd next = xtwx.ldlt().solve(xt_times(d.x, (w.array() * z.array()).matrix()));
    Eigen::VectorXd step = next - beta;
    Eigen::VectorXd e = nb::linear_predictor(d.x, next, d.offset);
    double nll = poisson_ll(e);
    for (int h = 0; h < 30 && it > 0 && !(nll >= ll); ++h) {
      step *= 0.5;
      next = beta + step;
      e = nb::linear_predictor(d.x, next, d.offset);
      nll = poisson_ll(e);
    }
    const double change = step.cwiseAbs().maxCoeff();
    beta = next;
    eta = e;
    mu = eta.array().exp();
    ll = nll;
    if (change < 1e-10) break;
  }
  (void)n;
  return beta;
}

}  // namespace detail

namespace nb {

namespace {

struct Accum {
  double rest = 0.0;
  double tau = 0.0;
  double tau_tau = 0.0;
};

}  // namespace

double glm_loglik(const DesignTable& d, const Eigen::VectorXd& beta, double ln_alpha) {
  const double alpha = std::exp(ln_alpha);
  const CountTerms ct({d.y.data(), static_cast<std::size_t>(d.rows())},
                      {d.weights.data(), static_cast<std::size_t>(d.rows())});
  const Eigen::VectorXd eta = linear_predictor(d.x, beta, d.offset);
  double s = 0.0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    s += d.weights[i] * eta_terms(d.y[i], eta[i], alpha).rest;
  }
  return s + ct.log_ratio(alpha) - ct.log_factorial();
}

Eigen::VectorXd glm_score(const DesignTable& d, const Eigen::VectorXd& beta, double ln_alpha) {
  const double alpha = std::exp(ln_alpha);
  const CountTerms ct({d.y.data(), static_cast<std::size_t>(d.rows())},
                      {d.weights.data(), static_cast<std::size_t>(d.rows())});
  const Eigen::VectorXd eta = linear_predictor(d.x, beta, d.offset);
  Eigen::VectorXd d1(d.rows());
  double tau = 0.0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const auto t = eta_terms(d.y[i], eta[i], alpha);
    d1[i] = d.weights[i] * t.d1;
    tau += d.weights[i] * t.tau;
  }
  Eigen::VectorXd out(d.cols() + 1);
  out.head(d.cols()) = detail::xt_times(d.x, d1);
  out[d.cols()] = tau + ct.tau_score(alpha);
  return out;
}

Eigen::MatrixXd glm_information(const DesignTable& d, const Eigen::VectorXd& beta,
                                double ln_alpha) {
  const double alpha = std::exp(ln_alpha);
  const CountTerms ct({d.y.data(), static_cast<std::size_t>(d.rows())},
                      {d.weights.data(), static_cast<std::size_t>(d.rows())});
  const Eigen::VectorXd eta = linear_predictor(d.x, beta, d.offset);
  const Eigen::Index p = d.cols();
  Eigen::VectorXd w(d.rows());
  Eigen::VectorXd cross(d.rows());
  double tt = 0.0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const auto t = eta_terms(d.y[i], eta[i], alpha);
    w[i] = d.weights[i] * t.w;
    cross[i] = d.weights[i] * t.d1_tau;
    tt += d.weights[i] * t.tau_tau;
  }
  Eigen::MatrixXd info(p + 1, p + 1);
  info.topLeftCorner(p, p) = detail::weighted_cross(d.x, w);
  const Eigen::VectorXd bt = -detail::xt_times(d.x, cross);
  info.block(0, p, p, 1) = bt;
  info.block(p, 0, 1, p) = bt.transpose();
  info(p, p) = -(tt + ct.tau_curvature(alpha));
  return info;
}

}  // namespace nb

namespace {

// Per-observation scores over (beta, ln alpha), weighted by prior weights.
Eigen::MatrixXd glm_row_scores(const DesignTable& d, const Eigen::VectorXd& beta,
                               double ln_alpha) {
  const double alpha = std::exp(ln_alpha);
  const Eigen::VectorXd eta = nb::linear_predictor(d.x, beta, d.offset);
  const Eigen::Index p = d.cols();
  Eigen::MatrixXd s(d.rows(), p + 1);
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const auto t = nb::eta_terms(d.y[i], eta[i], alpha);
    s.row(i).head(p) = d.weights[i] * t.d1 * d.x.row(i);
    s(i, p) = d.weights[i] * (t.tau + nb::log_ratio_tau_score(d.y[i], alpha));
  }
  return s;
}

}  // namespace

namespace detail {

std::vector<int> cluster_ids(const DesignTable& d, ClusterLevel level, std::size_t* n_clusters) {
  std::vector<int> raw(static_cast<std::size_t>(d.rows()));
  for (std::size_t i = 0; i < raw.size(); ++i) {
    switch (level) {
      case ClusterLevel::observation:
        raw[i] = static_cast<int>(i);
        break;
      case ClusterLevel::group:
        if (d.group.size() != raw.size()) throw DataError("design has no group ids");
        raw[i] = d.group[i];
        break;
      case ClusterLevel::region:
        if (d.region.size() != raw.size()) throw DataError("design has no region ids");
        raw[i] = d.region[i];
        break;
    }
  }
  std::vector<int> sorted = raw;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (auto& v : raw) {
    v = static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
  }
  *n_clusters = sorted.size();
  return raw;
}

Eigen::MatrixXd sandwich(const Eigen::MatrixXd& bread, const Eigen::MatrixXd& cluster_scores) {
  const auto g = static_cast<double>(cluster_scores.rows());
  const Eigen::MatrixXd meat = cluster_scores.transpose() * cluster_scores * (g / (g - 1.0));
  Eigen::MatrixXd v = bread * meat * bread;
  return 0.5 * (v + v.transpose());
}

}  // namespace detail

namespace {

Eigen::MatrixXd glm_robust_cov(const DesignTable& d, const Eigen::VectorXd& beta,
                               double ln_alpha, bool include_alpha,
                               const Eigen::MatrixXd& bread, ClusterLevel level,
                               std::size_t* n_clusters) {
  const auto ids = detail::cluster_ids(d, level, n_clusters);
  if (*n_clusters < 2) throw DataError("robust standard errors need at least 2 clusters");
  const Eigen::MatrixXd rows = glm_row_scores(d, beta, ln_alpha);
  const Eigen::Index k = include_alpha ? rows.cols() : rows.cols() - 1;
  Eigen::MatrixXd by_cluster = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(*n_clusters), k);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    by_cluster.row(ids[static_cast<std::size_t>(i)]) += rows.row(i).head(k);
  }
  return detail::sandwich(bread, by_cluster);
}

}  // namespace

FitResult fit_nb_glm(const DesignTable& d, const FitOptions& opt) {
  detail::validate_counts(d);
  check_full_rank(d.x, d.columns);
  const Eigen::Index n = d.rows();
  const Eigen::Index p = d.cols();
  const nb::CountTerms ct({d.y.data(), static_cast<std::size_t>(n)},
                          {d.weights.data(), static_cast<std::size_t>(n)});

  Eigen::VectorXd beta = detail::poisson_start(d);
  double tau = std::clamp(opt.init_ln_alpha, nb::kMinLnAlpha, nb::kMaxLnAlpha);

  auto rest_sum = [&](const Eigen::VectorXd& eta, double alpha) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      s += d.weights[i] * nb::eta_terms(d.y[i], eta[i], alpha).rest;
    }
    return s;
  };

  FitResult fit;
  fit.terms = d.columns;
  fit.n_obs = static_cast<std::size_t>(n);
  Convergence& conv = fit.convergence;
  conv.status = FitStatus::max_iterations;
  Eigen::VectorXd eta = nb::linear_predictor(d.x, beta, d.offset);
  bool ridged_any = false;

  for (int it = 1; it <= opt.max_iterations; ++it) {
    conv.iterations = it;
    double alpha = std::exp(tau);

    // Newton step for beta at fixed alpha; the observed weight is positive.
    Eigen::VectorXd g(n);
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto t = nb::eta_terms(d.y[i], eta[i], alpha);
      g[i] = d.weights[i] * t.d1;
      w[i] = d.weights[i] * t.w;
    }
    const Eigen::VectorXd grad = detail::xt_times(d.x, g);
    Eigen::MatrixXd h = detail::weighted_cross(d.x, w);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) {
      h.diagonal().array() += opt.ridge * std::max(1.0, h.diagonal().maxCoeff());
      ldlt.compute(h);
      ridged_any = true;
    }
    Eigen::VectorXd step = ldlt.solve(grad);
    const double base = rest_sum(eta, alpha);
    Eigen::VectorXd nbeta = beta + step;
    Eigen::VectorXd neta = nb::linear_predictor(d.x, nbeta, d.offset);
    double cand = rest_sum(neta, alpha);
    for (int half = 0; half < 40 && !(cand >= base); ++half) {
      step *= 0.5;
      nbeta = beta + step;
      neta = nb::linear_predictor(d.x, nbeta, d.offset);
      cand = rest_sum(neta, alpha);
    }
    if (!(cand >= base)) {
      step.setZero();
      nbeta = beta;
      neta = eta;
    }
    beta = nbeta;
    eta = neta;

    // Safeguarded Newton step for ln alpha at fixed beta.
    double s = ct.tau_score(alpha);
    double c = ct.tau_curvature(alpha);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto t = nb::eta_terms(d.y[i], eta[i], alpha);
      s += d.weights[i] * t.tau;
      c += d.weights[i] * t.tau_tau;
    }
    c = -c;
    double dtau = c > 1e-12 ? s / c : (s > 0 ? 1.0 : -1.0);
    dtau = std::clamp(dtau, -3.0, 3.0);
    auto tau_ll = [&](double tv) {
      const double a = std::exp(tv);
      return ct.log_ratio(a) + rest_sum(eta, a);
    };
    const double tau_base = tau_ll(tau);
    double ntau = std::clamp(tau + dtau, nb::kMinLnAlpha, nb::kMaxLnAlpha);
    double tcand = tau_ll(ntau);
    for (int half = 0; half < 40 && !(tcand >= tau_base); ++half) {
      ntau = tau + 0.5 * (ntau - tau);
      tcand = tau_ll(ntau);
    }
    if (!(tcand >= tau_base)) ntau = tau;
    const double tau_change = std::abs(ntau - tau);
    tau = ntau;

    conv.max_change = std::max(step.size() ? step.cwiseAbs().maxCoeff() : 0.0, tau_change);
    if (conv.max_change < opt.tolerance) {
      conv.status = FitStatus::converged;
      break;
    }
  }

  fit.beta = beta;
  fit.ln_alpha = tau;
  fit.alpha_at_boundary = tau <= nb::kMinLnAlpha + 1e-9;
  fit.loglik = nb::glm_loglik(d, beta, tau);
  fit.mu = eta.array().exp();

  Eigen::VectorXd score = nb::glm_score(d, beta, tau);
  if (fit.alpha_at_boundary && score[p] < 0.0) score[p] = 0.0;
  conv.gradient_norm = score.cwiseAbs().maxCoeff();

  const Eigen::MatrixXd info_full = nb::glm_information(d, beta, tau);
  const Eigen::Index k = fit.alpha_at_boundary ? p : p + 1;
  bool ridged = false;
  fit.covariance = detail::inverse_spd(info_full.topLeftCorner(k, k), opt.ridge, &ridged);
  fit.covariance_terms = d.columns;
  if (!fit.alpha_at_boundary) fit.covariance_terms.emplace_back("ln_alpha");
  if (ridged || ridged_any) fit.notes.push_back("ridge applied to a near-singular information matrix");
  fit.se = fit.covariance.diagonal().head(p).cwiseSqrt();
  if (!fit.alpha_at_boundary) fit.ln_alpha_se = std::sqrt(fit.covariance(p, p));
  if (fit.alpha_at_boundary) fit.notes.push_back("alpha at lower boundary");

  fit.cluster = opt.cluster.value_or(ClusterLevel::observation);
  fit.robust_covariance = glm_robust_cov(d, beta, tau, !fit.alpha_at_boundary, fit.covariance,
                                         fit.cluster, &fit.n_clusters);
  fit.robust_se = fit.robust_covariance.diagonal().head(p).cwiseSqrt();
  if (!fit.alpha_at_boundary) fit.ln_alpha_robust_se = std::sqrt(fit.robust_covariance(p, p));
  fit.z = fit.beta.array() / fit.robust_se.array();
  fit.p = fit.z.unaryExpr([](double z) { return normal_two_sided_p(z); });
  return fit;
}

Eigen::VectorXd robust_se(const FitResult& fit, const DesignTable& d, ClusterLevel cluster) {
  if (!fit.variance_components.empty()) return detail::mixed_robust_se(fit, d, cluster);
  const Eigen::Index p = d.cols();
  if (fit.beta.size() != p) throw DataError("fit does not match design columns");
  const Eigen::Index k = fit.alpha_at_boundary ? p : p + 1;
  std::size_t n_clusters = 0;
  const Eigen::MatrixXd v = glm_robust_cov(d, fit.beta, fit.ln_alpha, !fit.alpha_at_boundary,
                                           fit.covariance.topLeftCorner(k, k), cluster,
                                           &n_clusters);
  return v.diagonal().head(p).cwiseSqrt();
}

Eigen::VectorXd predict_mu(const FitResult& fit, const DesignTable& d, bool include_modes) {
  if (fit.beta.size() != d.cols() || fit.terms != d.columns) {
    throw DataError("fit terms do not match design columns");
  }
  Eigen::VectorXd eta = nb::linear_predictor(d.x, fit.beta, d.offset);
  if (include_modes) {
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      const auto ui = static_cast<std::size_t>(i);
      if (fit.group_modes.size() > 0 && ui < d.group.size()) eta[i] += fit.group_modes[d.group[ui]];
      if (fit.region_modes.size() > 0 && ui < d.region.size()) {
        eta[i] += fit.region_modes[d.region[ui]];
      }
    }
  }
  return eta.array().exp();
}

FitResult fit_model(const DesignTable& d, const std::vector<std::string>& levels,
                    const FitOptions& opt) {
  return levels.empty() ? fit_nb_glm(d, opt) : fit_nb_mixed(d, levels, opt);
}

}  // namespace netspill
