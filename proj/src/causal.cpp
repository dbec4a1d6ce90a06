#include "netspill/causal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "netspill/design.hpp"
#include "netspill/errors.hpp"
#include "netspill/logistic.hpp"
#include "netspill/negbin.hpp"
#include "netspill/rng.hpp"

namespace netspill {

std::string_view to_string(TreatmentType t) {
  return t == TreatmentType::binary ? "binary" : "continuous";
}

std::string_view to_string(WeightMethod m) {
  switch (m) {
    case WeightMethod::iptw:
      return "iptw";
    case WeightMethod::cbps:
      return "cbps";
    case WeightMethod::super_learner:
      return "super_learner";
  }
  return "iptw";
}

WeightMethod parse_weight_method(std::string_view s) {
  if (s == "iptw") return WeightMethod::iptw;
  if (s == "cbps") return WeightMethod::cbps;
  if (s == "super_learner" || s == "super-learner") return WeightMethod::super_learner;
  throw ConfigError("unknown weighting method '" + std::string(s) + "'");
}

std::string_view to_string(Candidate c) {
  switch (c) {
    case Candidate::main_effects:
      return "main_effects";
    case Candidate::squares:
      return "squares";
    case Candidate::intercept_only:
      return "intercept_only";
  }
  return "main_effects";
}

TreatmentType detect_treatment_type(const Eigen::VectorXd& t) {
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    if (t[i] != 0.0 && t[i] != 1.0) return TreatmentType::continuous;
  }
  return TreatmentType::binary;
}

double effective_sample_size(const Eigen::VectorXd& w) {
  return w.sum() * w.sum() / w.squaredNorm();
}

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double normal_logpdf(double x, double mean, double var) {
  const double z = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + z * z / var);
}

struct Prepared {
  TreatmentType type;
  Eigen::VectorXd t;
  Eigen::MatrixXd z;        // [1, standardized covariates]
  Eigen::MatrixXd xs;       // standardized covariates
  std::vector<bool> binary_col;
  double tbar = 0.0;
  double tvar = 0.0;        // n - 1 divisor
};

Prepared prepare(const Eigen::VectorXd& t, const Covariates& c) {
  const Eigen::Index n = t.size();
  if (c.x.rows() != n) throw DataError("treatment and covariates differ in length");
  if (static_cast<Eigen::Index>(c.names.size()) != c.x.cols()) {
    throw DataError("covariate names do not match columns");
  }
  if (!t.allFinite() || !c.x.allFinite()) throw DataError("treatment or covariates are not finite");
  if (n < 3) throw DataError("too few observations for a propensity model");
  Prepared p;
  p.type = detect_treatment_type(t);
  p.t = t;
  p.tbar = t.mean();
  p.tvar = (t.array() - p.tbar).square().sum() / static_cast<double>(n - 1);
  if (p.type == TreatmentType::binary) {
    const double n1 = t.sum();
    if (n1 == 0.0 || n1 == static_cast<double>(n)) {
      throw DataError("treatment has a single arm; both arms are required");
    }
  } else if (!(p.tvar > 0.0)) {
    throw DataError("continuous treatment has zero variance");
  }
  const Eigen::Index k = c.x.cols();
  p.xs.resize(n, k);
  p.binary_col.resize(static_cast<std::size_t>(k));
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::VectorXd col = c.x.col(j);
    const double m = col.mean();
    const double sd = std::sqrt((col.array() - m).square().sum() / static_cast<double>(n - 1));
    if (!(sd > 0.0)) throw RankDeficiencyError({c.names[static_cast<std::size_t>(j)]});
    p.xs.col(j) = (col.array() - m) / sd;
    p.binary_col[static_cast<std::size_t>(j)] = detect_treatment_type(col) == TreatmentType::binary;
  }
  p.z.resize(n, k + 1);
  p.z.col(0).setOnes();
  p.z.rightCols(k) = p.xs;
  std::vector<std::string> names{"_cons"};
  names.insert(names.end(), c.names.begin(), c.names.end());
  check_full_rank(p.z, names);
  return p;
}

// Stabilized weights from propensities (binary) or conditional densities
// given as log values (continuous).
Eigen::VectorXd binary_weights(const Prepared& p, const Eigen::VectorXd& e) {
  const double pbar = p.tbar;
  Eigen::VectorXd w(p.t.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    w[i] = p.t[i] == 1.0 ? pbar / e[i] : (1.0 - pbar) / (1.0 - e[i]);
  }
  return w;
}

Eigen::VectorXd continuous_weights(const Prepared& p, const Eigen::VectorXd& mean, double var) {
  Eigen::VectorXd w(p.t.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    w[i] = std::exp(normal_logpdf(p.t[i], p.tbar, p.tvar) - normal_logpdf(p.t[i], mean[i], var));
  }
  return w;
}

void check_positivity(const Eigen::VectorXd& e, WeightSet& ws) {
  Eigen::Index out = 0;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    if (e[i] < 0.001 || e[i] > 0.999) ++out;
  }
  if (static_cast<double>(out) > 0.05 * static_cast<double>(e.size())) {
    ws.warnings.push_back("positivity: " + std::to_string(out) +
                          " propensities fall outside [0.001, 0.999]");
  }
}

double quantile7(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void finalize(WeightSet& ws, Eigen::VectorXd w, const Prepared& p, const Covariates& c,
              const WeightOptions& opt) {
  if (!w.allFinite() || !(w.array() > 0.0).all()) {
    throw PositivityError("non-finite or non-positive weights; propensities reach 0 or 1");
  }
  if (opt.truncate) {
    const double cap = quantile7({w.data(), w.data() + w.size()}, opt.truncate_quantile);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      if (w[i] > cap) {
        w[i] = cap;
        ++ws.n_truncated;
      }
    }
    if (ws.n_truncated > 0) {
      ws.truncation_cap = cap;
      ws.warnings.push_back(std::to_string(ws.n_truncated) + " weights truncated at the " +
                            std::to_string(opt.truncate_quantile) + " quantile");
    }
  }
  w /= w.mean();
  ws.weights = std::move(w);
  ws.type = p.type;
  ws.ess = effective_sample_size(ws.weights);
  ws.balance = balance_table(p.t, p.type, c, ws.weights);
}

double weighted_corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& w) {
  const double sw = w.sum();
  const double ma = w.dot(a) / sw;
  const double mb = w.dot(b) / sw;
  const Eigen::ArrayXd da = a.array() - ma;
  const Eigen::ArrayXd db = b.array() - mb;
  const double cov = (w.array() * da * db).sum();
  const double va = (w.array() * da * da).sum();
  const double vb = (w.array() * db * db).sum();
  return cov / std::sqrt(va * vb);
}

// Projection onto the probability simplex.
Eigen::VectorXd simplex_project(const Eigen::VectorXd& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double css = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    css += u[i];
    const double th = (css - 1.0) / static_cast<double>(i + 1);
    if (u[i] - th > 0.0) theta = th;
  }
  return (v.array() - theta).max(0.0);
}

Eigen::MatrixXd candidate_design(Candidate c, const Prepared& p) {
  const Eigen::Index n = p.t.size();
  switch (c) {
    case Candidate::intercept_only:
      return Eigen::MatrixXd::Ones(n, 1);
    case Candidate::main_effects:
      return p.z;
    case Candidate::squares: {
      std::vector<Eigen::Index> sq;
      for (std::size_t j = 0; j < p.binary_col.size(); ++j) {
        if (!p.binary_col[j]) sq.push_back(static_cast<Eigen::Index>(j));
      }
      Eigen::MatrixXd d(n, p.z.cols() + static_cast<Eigen::Index>(sq.size()));
      d.leftCols(p.z.cols()) = p.z;
      for (std::size_t a = 0; a < sq.size(); ++a) {
        d.col(p.z.cols() + static_cast<Eigen::Index>(a)) = p.xs.col(sq[a]).array().square();
      }
      return d;
    }
  }
  return p.z;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

Eigen::VectorXd take(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

// Candidate prediction: probability (binary) or conditional mean (continuous).
Eigen::VectorXd fit_predict(const Eigen::MatrixXd& train_x, const Eigen::VectorXd& train_t,
                            const Eigen::MatrixXd& test_x, TreatmentType type,
                            double* sigma2 = nullptr) {
  if (type == TreatmentType::binary) {
    const auto f = glm::logistic(train_x, train_t);
    return (test_x * f.beta).unaryExpr([](double e) { return glm::expit(e); });
  }
  const auto f = glm::linear(train_x, train_t);
  if (sigma2) *sigma2 = f.sigma2;
  return test_x * f.beta;
}

}  // namespace

std::vector<BalanceRow> balance_table(const Eigen::VectorXd& t, TreatmentType type,
                                      const Covariates& c, const Eigen::VectorXd& w) {
  std::vector<BalanceRow> out;
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(t.size());
  for (Eigen::Index j = 0; j < c.x.cols(); ++j) {
    BalanceRow r;
    r.covariate = c.names[static_cast<std::size_t>(j)];
    const Eigen::VectorXd x = c.x.col(j);
    if (type == TreatmentType::binary) {
      auto arm_stats = [&](const Eigen::VectorXd& wt, double arm, double* mean, double* var) {
        double sw = 0.0, sx = 0.0, n = 0.0, s1 = 0.0, s2 = 0.0;
        for (Eigen::Index i = 0; i < t.size(); ++i) {
          if (t[i] != arm) continue;
          sw += wt[i];
          sx += wt[i] * x[i];
          n += 1.0;
          s1 += x[i];
          s2 += x[i] * x[i];
        }
        *mean = sx / sw;
        if (var) *var = (s2 - s1 * s1 / n) / (n - 1.0);
      };
      double m1, m0, v1, v0;
      arm_stats(ones, 1.0, &m1, &v1);
      arm_stats(ones, 0.0, &m0, &v0);
      const double sd = std::sqrt((v1 + v0) / 2.0);
      r.unweighted = sd > 0.0 ? (m1 - m0) / sd : 0.0;
      arm_stats(w, 1.0, &m1, nullptr);
      arm_stats(w, 0.0, &m0, nullptr);
      r.weighted = sd > 0.0 ? (m1 - m0) / sd : 0.0;
    } else {
      r.unweighted = weighted_corr(t, x, ones);
      r.weighted = weighted_corr(t, x, w);
    }
    out.push_back(r);
  }
  return out;
}

WeightSet iptw_weights(const Eigen::VectorXd& treatment, std::string_view name,
                       const Covariates& c, const WeightOptions& opt) {
  const Prepared p = prepare(treatment, c);
  WeightSet ws;
  ws.method = WeightMethod::iptw;
  ws.treatment = std::string(name);
  if (p.type == TreatmentType::binary) {
    const auto f = glm::logistic(p.z, p.t);
    ws.propensity = f.fitted;
    check_positivity(f.fitted, ws);
    finalize(ws, binary_weights(p, f.fitted), p, c, opt);
  } else {
    const auto f = glm::linear(p.z, p.t);
    ws.propensity = f.fitted.binaryExpr(p.t, [&](double m, double t) {
      return std::exp(normal_logpdf(t, m, f.sigma2));
    });
    finalize(ws, continuous_weights(p, f.fitted, f.sigma2), p, c, opt);
  }
  return ws;
}

namespace {

// Moment vector for CBPS and its Jacobian.
struct Moments {
  Eigen::VectorXd m;
  Eigen::MatrixXd jac;
};

Moments cbps_binary_moments(const Prepared& p, const Eigen::VectorXd& beta) {
  const Eigen::Index n = p.z.rows();
  const Eigen::Index k = p.z.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  Moments out{Eigen::VectorXd::Zero(2 * k), Eigen::MatrixXd::Zero(2 * k, k)};
  const Eigen::VectorXd eta = p.z * beta;
  Eigen::VectorXd a(n), b(n), da(n), db(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = std::clamp(glm::expit(eta[i]), 1e-300, 1.0 - 1e-16);
    const double t = p.t[i];
    a[i] = t - e;
    b[i] = t / e - (1.0 - t) / (1.0 - e);
    da[i] = -e * (1.0 - e);
    db[i] = -(t * (1.0 - e) / e + (1.0 - t) * e / (1.0 - e));
  }
  out.m.head(k) = p.z.transpose() * a * inv_n;
  out.m.tail(k) = p.z.transpose() * b * inv_n;
  out.jac.topRows(k) = p.z.transpose() * (p.z.array().colwise() * da.array()).matrix() * inv_n;
  out.jac.bottomRows(k) = p.z.transpose() * (p.z.array().colwise() * db.array()).matrix() * inv_n;
  return out;
}

// Parameters: beta (on standardized treatment), log sigma^2.
Eigen::VectorXd cbps_continuous_m(const Prepared& p, const Eigen::VectorXd& ts,
                                  const Eigen::VectorXd& theta) {
  const Eigen::Index n = p.z.rows();
  const Eigen::Index k = p.z.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  const Eigen::VectorXd beta = theta.head(k);
  const double s2 = std::exp(theta[k]);
  const Eigen::VectorXd r = ts - p.z * beta;
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w[i] = std::exp(normal_logpdf(ts[i], 0.0, 1.0) - normal_logpdf(ts[i], ts[i] - r[i], s2));
  }
  Eigen::VectorXd m(2 * k + 1);
  m.head(k) = p.z.transpose() * r * inv_n;
  m[k] = ((r.array().square() / s2) - 1.0).sum() * inv_n;
  m.tail(k) = p.z.transpose() * (w.array() * ts.array()).matrix() * inv_n;
  return m;
}

Moments cbps_continuous_moments(const Prepared& p, const Eigen::VectorXd& ts,
                                const Eigen::VectorXd& theta) {
  Moments out;
  out.m = cbps_continuous_m(p, ts, theta);
  out.jac.resize(out.m.size(), theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(theta[j]));
    Eigen::VectorXd tp = theta, tm = theta;
    tp[j] += h;
    tm[j] -= h;
    out.jac.col(j) = (cbps_continuous_m(p, ts, tp) - cbps_continuous_m(p, ts, tm)) / (2.0 * h);
  }
  return out;
}

// Levenberg-Marquardt on 0.5 |m|^2 until |J'm|_inf < tol.
template <typename F>
Eigen::VectorXd gmm_solve(F moments, Eigen::VectorXd theta, double tol, double* final_norm) {
  Moments cur = moments(theta);
  double q = 0.5 * cur.m.squaredNorm();
  double lambda = 1e-3;
  for (int it = 0; it < 1000; ++it) {
    const Eigen::VectorXd g = cur.jac.transpose() * cur.m;
    *final_norm = g.cwiseAbs().maxCoeff();
    if (*final_norm < tol) return theta;
    const Eigen::MatrixXd jtj = cur.jac.transpose() * cur.jac;
    bool ok = false;
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
      const Eigen::VectorXd step = -a.ldlt().solve(g);
      const Eigen::VectorXd next = theta + step;
      Moments cand = moments(next);
      const double qn = 0.5 * cand.m.squaredNorm();
      if (std::isfinite(qn) && qn <= q) {
        theta = next;
        cur = std::move(cand);
        const bool stalled = q - qn <= 1e-18 * q;
        q = qn;
        lambda = std::max(lambda * 0.3, 1e-12);
        ok = true;
        if (stalled && step.cwiseAbs().maxCoeff() < 1e-14) tries = 30;
        break;
      }
      lambda *= 10.0;
    }
    if (!ok) break;
  }
  const Eigen::VectorXd g = cur.jac.transpose() * cur.m;
  *final_norm = g.cwiseAbs().maxCoeff();
  if (*final_norm < tol) return theta;
  throw ConvergenceError("CBPS optimizer did not converge; final moment gradient norm " +
                         std::to_string(*final_norm));
}

}  // namespace

WeightSet cbps_weights(const Eigen::VectorXd& treatment, std::string_view name,
                       const Covariates& c, const WeightOptions& opt) {
  const Prepared p = prepare(treatment, c);
  WeightSet ws;
  ws.method = WeightMethod::cbps;
  ws.treatment = std::string(name);
  const Eigen::Index k = p.z.cols();
  if (p.type == TreatmentType::binary) {
    const auto start = glm::logistic(p.z, p.t);
    const Eigen::VectorXd beta = gmm_solve(
        [&](const Eigen::VectorXd& b) { return cbps_binary_moments(p, b); }, start.beta, 1e-8,
        &ws.moment_norm);
    const Eigen::VectorXd e = (p.z * beta).unaryExpr([](double v) { return glm::expit(v); });
    ws.propensity = e;
    check_positivity(e, ws);
    finalize(ws, binary_weights(p, e), p, c, opt);
  } else {
    const double sd = std::sqrt(p.tvar);
    const Eigen::VectorXd ts = (p.t.array() - p.tbar) / sd;
    const auto start = glm::linear(p.z, ts);
    Eigen::VectorXd theta(k + 1);
    theta.head(k) = start.beta;
    theta[k] = std::log(start.sigma2);
    theta = gmm_solve([&](const Eigen::VectorXd& th) { return cbps_continuous_moments(p, ts, th); },
                      theta, 1e-8, &ws.moment_norm);
    const Eigen::VectorXd mean = p.z * theta.head(k);
    const double s2 = std::exp(theta[k]);
    Eigen::VectorXd w(ts.size());
    ws.propensity.resize(ts.size());
    for (Eigen::Index i = 0; i < ts.size(); ++i) {
      w[i] = std::exp(normal_logpdf(ts[i], 0.0, 1.0) - normal_logpdf(ts[i], mean[i], s2));
      ws.propensity[i] = std::exp(normal_logpdf(ts[i], mean[i], s2)) / sd;
    }
    finalize(ws, w, p, c, opt);
  }
  return ws;
}

WeightSet super_learner_weights(const Eigen::VectorXd& treatment, std::string_view name,
                                const Covariates& c, const SuperLearnerOptions& sl,
                                const WeightOptions& opt) {
  const Prepared p = prepare(treatment, c);
  if (sl.library.empty()) throw ConfigError("super learner library is empty");
  if (sl.folds < 2) throw ConfigError("super learner needs at least 2 folds");
  const Eigen::Index n = p.t.size();
  WeightSet ws;
  ws.method = WeightMethod::super_learner;
  ws.treatment = std::string(name);

  // Fold assignment from a seeded shuffle.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  auto eng = rng::engine(sl.seed, rng::kFoldStream);
  rng::shuffle(order.begin(), order.end(), eng);
  std::vector<int> fold(static_cast<std::size_t>(n));
  for (std::size_t a = 0; a < order.size(); ++a) {
    fold[static_cast<std::size_t>(order[a])] = static_cast<int>(a % static_cast<std::size_t>(sl.folds));
  }

  std::vector<Candidate> kept;
  std::vector<Eigen::MatrixXd> designs;
  std::vector<Eigen::VectorXd> cv_pred;
  for (Candidate cand : sl.library) {
    const Eigen::MatrixXd x = candidate_design(cand, p);
    Eigen::VectorXd pred(n);
    bool ok = true;
    for (int f = 0; f < sl.folds && ok; ++f) {
      std::vector<Eigen::Index> tr, te;
      for (Eigen::Index i = 0; i < n; ++i) {
        (fold[static_cast<std::size_t>(i)] == f ? te : tr).push_back(i);
      }
      try {
        const Eigen::VectorXd pr =
            fit_predict(take_rows(x, tr), take(p.t, tr), take_rows(x, te), p.type);
        for (std::size_t a = 0; a < te.size(); ++a) pred[te[a]] = pr[static_cast<Eigen::Index>(a)];
      } catch (const Error& e) {
        ok = false;
        ws.warnings.push_back("candidate " + std::string(to_string(cand)) + " dropped: " + e.what());
      }
    }
    if (!ok) continue;
    kept.push_back(cand);
    designs.push_back(x);
    cv_pred.push_back(pred);
  }
  if (kept.empty()) throw ConvergenceError("every super learner candidate failed");
  const auto m = static_cast<Eigen::Index>(kept.size());
  Eigen::MatrixXd pm(n, m);
  for (Eigen::Index k = 0; k < m; ++k) pm.col(k) = cv_pred[static_cast<std::size_t>(k)];

  Eigen::VectorXd a = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  auto loss = [&](const Eigen::VectorXd& coef) {
    const Eigen::VectorXd mix = pm * coef;
    if (p.type == TreatmentType::binary) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double l = p.t[i] == 1.0 ? mix[i] : 1.0 - mix[i];
        s -= std::log(std::max(l, 1e-300));
      }
      return s / static_cast<double>(n);
    }
    return (p.t - mix).squaredNorm() / static_cast<double>(n);
  };
  if (p.type == TreatmentType::binary) {
    // Likelihoods of each candidate per row; EM for the mixing weights.
    Eigen::MatrixXd lik(n, m);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < m; ++k) {
        lik(i, k) = std::max(p.t[i] == 1.0 ? pm(i, k) : 1.0 - pm(i, k), 1e-300);
      }
    }
    for (int it = 0; it < 5000; ++it) {
      const Eigen::VectorXd mix = lik * a;
      Eigen::VectorXd next = Eigen::VectorXd::Zero(m);
      for (Eigen::Index i = 0; i < n; ++i) next += (lik.row(i).transpose().array() * a.array()).matrix() / mix[i];
      next /= static_cast<double>(n);
      const double change = (next - a).cwiseAbs().maxCoeff();
      a = next;
      if (change < 1e-12) break;
    }
  } else {
    // Simplex-constrained least squares by projected gradient.
    const Eigen::MatrixXd g = pm.transpose() * pm;
    const Eigen::VectorXd b = pm.transpose() * p.t;
    const double lip = std::max(g.operatorNorm(), 1e-300);
    for (int it = 0; it < 20000; ++it) {
      const Eigen::VectorXd next = simplex_project(a - (g * a - b) / lip);
      const double change = (next - a).cwiseAbs().maxCoeff();
      a = next;
      if (change < 1e-14) break;
    }
  }
  a = a.cwiseMax(0.0);
  a /= a.sum();
  double best = INFINITY;
  Eigen::Index best_k = 0;
  for (Eigen::Index k = 0; k < m; ++k) {
    const double l = loss(Eigen::VectorXd::Unit(m, k));
    ws.candidate_cv_loss.push_back(l);
    if (l < best) {
      best = l;
      best_k = k;
    }
  }
  ws.ensemble_cv_loss = loss(a);
  if (!(ws.ensemble_cv_loss <= best)) {
    a = Eigen::VectorXd::Unit(m, best_k);
    ws.ensemble_cv_loss = best;
    ws.warnings.push_back("stacking did not improve on the best candidate; using it alone");
  }
  for (Eigen::Index k = 0; k < m; ++k) {
    ws.candidates.emplace_back(to_string(kept[static_cast<std::size_t>(k)]));
    ws.stack_coefficients.push_back(a[k]);
  }

  // Full-data refit of each candidate with positive weight.
  Eigen::VectorXd ens = Eigen::VectorXd::Zero(n);
  double p_eff = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    if (a[k] == 0.0) continue;
    const auto& x = designs[static_cast<std::size_t>(k)];
    ens += a[k] * fit_predict(x, p.t, x, p.type);
    p_eff += a[k] * static_cast<double>(x.cols());
  }
  if (p.type == TreatmentType::binary) {
    ws.propensity = ens;
    check_positivity(ens, ws);
    finalize(ws, binary_weights(p, ens), p, c, opt);
  } else {
    const double var = (p.t - ens).squaredNorm() / (static_cast<double>(n) - p_eff);
    ws.propensity = ens.binaryExpr(p.t, [&](double mu, double t) {
      return std::exp(normal_logpdf(t, mu, var));
    });
    finalize(ws, continuous_weights(p, ens, var), p, c, opt);
  }
  return ws;
}

WeightSet compute_weights(WeightMethod method, const Eigen::VectorXd& treatment,
                          std::string_view name, const Covariates& covariates,
                          std::uint64_t seed) {
  switch (method) {
    case WeightMethod::iptw:
      return iptw_weights(treatment, name, covariates);
    case WeightMethod::cbps:
      return cbps_weights(treatment, name, covariates);
    case WeightMethod::super_learner: {
      SuperLearnerOptions sl;
      sl.seed = seed;
      return super_learner_weights(treatment, name, covariates, sl);
    }
  }
  throw ConfigError("unknown weighting method");
}

CausalEstimate weighted_effect(const Eigen::VectorXd& y, const Eigen::VectorXd& t,
                               const WeightSet& ws, const Covariates& controls,
                               const Eigen::VectorXd& offset, OutcomeFamily family) {
  const Eigen::Index n = y.size();
  if (t.size() != n || ws.weights.size() != n || (controls.x.cols() > 0 && controls.x.rows() != n)) {
    throw DataError("outcome, treatment, weights and controls differ in length");
  }
  const Eigen::Index k = controls.x.cols();
  DesignTable d;
  d.outcome = "outcome";
  d.columns = {std::string(kIntercept), ws.treatment.empty() ? "treatment" : ws.treatment};
  d.columns.insert(d.columns.end(), controls.names.begin(), controls.names.end());
  d.x.resize(n, 2 + k);
  d.x.col(0).setOnes();
  d.x.col(1) = t;
  if (k > 0) d.x.rightCols(k) = controls.x;
  d.y = y;
  d.offset = offset.size() == n ? offset : Eigen::VectorXd::Zero(n);
  d.weights = ws.weights;
  d.group.assign(static_cast<std::size_t>(n), 0);
  d.region.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d.region[static_cast<std::size_t>(i)] = static_cast<int>(i);
  d.period.assign(static_cast<std::size_t>(n), -1);
  d.n_groups = 1;
  d.n_regions = static_cast<std::size_t>(n);

  CausalEstimate est;
  est.method = std::string(to_string(ws.method));
  est.treatment = d.columns[1];
  if (family == OutcomeFamily::negative_binomial) {
    FitOptions fo;
    fo.cluster = ClusterLevel::observation;
    const FitResult fit = fit_nb_glm(d, fo);
    if (!fit.converged()) throw ConvergenceError("weighted outcome regression did not converge");
    est.estimate = fit.beta[1];
    est.se = fit.robust_se[1];
  } else {
    check_full_rank(d.x, d.columns);
    const Eigen::VectorXd w = d.weights;
    const Eigen::MatrixXd xw = d.x.array().colwise() * w.array();
    const Eigen::MatrixXd bread = (d.x.transpose() * xw).inverse();
    const Eigen::VectorXd beta = bread * (xw.transpose() * (y - d.offset));
    const Eigen::VectorXd e = y - d.offset - d.x * beta;
    const Eigen::MatrixXd s = xw.array().colwise() * e.array();
    const double p = static_cast<double>(d.x.cols());
    const Eigen::MatrixXd v =
        bread * (s.transpose() * s) * bread * (static_cast<double>(n) / (static_cast<double>(n) - p));
    est.estimate = beta[1];
    est.se = std::sqrt(v(1, 1));
  }
  if (!(est.se > 0.0)) throw DataError("treatment coefficient has a zero standard error");
  est.z = est.estimate / est.se;
  est.p = normal_two_sided_p(est.z);
  est.significant = est.p < 0.05;
  return est;
}

}  // namespace netspill
