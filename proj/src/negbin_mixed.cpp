#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "netspill/errors.hpp"
#include "netspill/nb_likelihood.hpp"
#include "netspill/negbin.hpp"
#include "negbin_internal.hpp"

namespace netspill {

namespace {

constexpr double kMinLogVar = -23.025850929940457;  // ln 1e-10
constexpr double kMaxLogVar = 9.210340371976184;    // ln 1e4
constexpr double kInf = std::numeric_limits<double>::infinity();

// Dense re-indexing of the random-effect structure. A "block" is a region in
// the two-level model and the whole group in the one-level model; rows are
// stored block by block.
struct Structure {
  bool two_level = false;
  int n_groups = 0;
  int n_blocks = 0;
  std::vector<int> group_panel;                 // dense group -> panel index
  std::vector<int> block_panel;                 // dense block -> panel region (two-level)
  std::vector<int> group_block_begin;           // blocks of g: [begin[g], begin[g+1])
  std::vector<std::vector<Eigen::Index>> block_rows;
  std::vector<int> row_group;
};

Structure make_structure(const DesignTable& d, const std::vector<std::string>& levels) {
  Structure s;
  if (levels == std::vector<std::string>{"group"}) {
    s.two_level = false;
  } else if (levels == std::vector<std::string>{"group", "region"}) {
    s.two_level = true;
  } else {
    throw ConfigError("random levels must be {group} or {group, region}");
  }
  const auto n = static_cast<std::size_t>(d.rows());
  if (d.group.size() != n) throw DataError("design has no group ids");
  if (s.two_level && d.region.size() != n) throw DataError("design has no region ids");

  std::map<int, int> gmap;
  for (int g : d.group) gmap.emplace(g, 0);
  for (auto& [panel, dense] : gmap) {
    dense = s.n_groups++;
    s.group_panel.push_back(panel);
  }
  s.row_group.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.row_group[i] = gmap.at(d.group[i]);

  if (!s.two_level) {
    s.n_blocks = s.n_groups;
    s.block_rows.resize(static_cast<std::size_t>(s.n_groups));
    for (std::size_t i = 0; i < n; ++i) {
      s.block_rows[static_cast<std::size_t>(s.row_group[i])].push_back(static_cast<Eigen::Index>(i));
    }
    s.group_block_begin.resize(static_cast<std::size_t>(s.n_groups) + 1);
    for (int g = 0; g <= s.n_groups; ++g) s.group_block_begin[static_cast<std::size_t>(g)] = g;
    return s;
  }

  // Regions ordered by (group, panel region).
  std::map<int, int> region_group;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, fresh] = region_group.emplace(d.region[i], s.row_group[i]);
    if (!fresh && it->second != s.row_group[i]) {
      throw DataError("region index " + std::to_string(d.region[i]) +
                      " appears in more than one group; levels are not nested");
    }
  }
  std::vector<std::pair<int, int>> order;  // (dense group, panel region)
  for (const auto& [r, g] : region_group) order.emplace_back(g, r);
  std::sort(order.begin(), order.end());
  std::map<int, int> bmap;
  s.group_block_begin.assign(static_cast<std::size_t>(s.n_groups) + 1, 0);
  for (const auto& [g, r] : order) {
    bmap[r] = s.n_blocks++;
    s.block_panel.push_back(r);
    ++s.group_block_begin[static_cast<std::size_t>(g) + 1];
  }
  for (int g = 0; g < s.n_groups; ++g) {
    s.group_block_begin[static_cast<std::size_t>(g) + 1] +=
        s.group_block_begin[static_cast<std::size_t>(g)];
  }
  s.block_rows.resize(static_cast<std::size_t>(s.n_blocks));
  for (std::size_t i = 0; i < n; ++i) {
    s.block_rows[static_cast<std::size_t>(bmap.at(d.region[i]))].push_back(
        static_cast<Eigen::Index>(i));
  }
  return s;
}

// Laplace-approximated marginal log-likelihood with its analytic gradient.
// Random-effect modes are kept between evaluations as warm starts.
class Laplace {
 public:
  Laplace(const DesignTable& d, Structure s) : d_(d), s_(std::move(s)) {
    p_ = d_.cols();
    k_ = p_ + (s_.two_level ? 3 : 2);
    u_ = Eigen::VectorXd::Zero(s_.n_groups);
    v_ = Eigen::VectorXd::Zero(s_.n_blocks);
    terms_.resize(static_cast<std::size_t>(d_.rows()));
    hbb_.resize(s_.n_blocks);
    hub_.resize(s_.n_blocks);
    gb_.resize(s_.n_blocks);
    huu_.resize(s_.n_groups);
    schur_.resize(s_.n_groups);
    std::vector<std::vector<double>> ys(static_cast<std::size_t>(s_.n_groups));
    for (Eigen::Index i = 0; i < d_.rows(); ++i) {
      ys[static_cast<std::size_t>(s_.row_group[static_cast<std::size_t>(i)])].push_back(d_.y[i]);
    }
    for (const auto& y : ys) {
      const std::vector<double> w(y.size(), 1.0);
      counts_.emplace_back(y, w);
    }
  }

  Eigen::Index size() const noexcept { return k_; }
  bool two_level() const noexcept { return s_.two_level; }
  const Structure& structure() const noexcept { return s_; }
  const Eigen::VectorXd& group_modes() const noexcept { return u_; }
  const Eigen::VectorXd& block_modes() const noexcept { return v_; }

  // Returns the log-likelihood. `scores`, if given, receives per-group
  // gradient rows (G x k); their column sums are the gradient.
  double evaluate(const Eigen::VectorXd& theta, Eigen::MatrixXd* scores) {
    const Eigen::VectorXd beta = theta.head(p_);
    alpha_ = std::exp(theta[p_]);
    const double phi_g = theta[p_ + 1];
    const double phi_r = s_.two_level ? theta[p_ + 2] : 0.0;
    pg_ = std::exp(-phi_g);
    pr_ = s_.two_level ? std::exp(-phi_r) : 0.0;
    if (!u_.allFinite()) u_.setZero();
    if (!v_.allFinite()) v_.setZero();
    ef_ = nb::linear_predictor(d_.x, beta, d_.offset);
    if (!ef_.allFinite()) return NAN;

    double total = 0.0;
    Eigen::VectorXd logdet(s_.n_groups);
    for (int g = 0; g < s_.n_groups; ++g) {
      const double jg = solve_group(g);
      if (!std::isfinite(jg)) return NAN;
      const auto& ct = counts_[static_cast<std::size_t>(g)];
      const int b0 = s_.group_block_begin[static_cast<std::size_t>(g)];
      const int b1 = s_.group_block_begin[static_cast<std::size_t>(g) + 1];
      double ld = 0.0;
      if (s_.two_level) {
        for (int b = b0; b < b1; ++b) ld += std::log(hbb_[b]);
        ld += std::log(schur_[g]);
      } else {
        ld = std::log(huu_[g]);
      }
      double lg = jg + ct.log_ratio(alpha_) - ct.log_factorial() - 0.5 * phi_g - 0.5 * ld;
      if (s_.two_level) lg -= 0.5 * phi_r * (b1 - b0);
      total += lg;
    }
    if (scores) *scores = group_scores();
    return total;
  }

 private:
  // Joint log density of the data and the random effects of group g (without
  // count-only terms and normalizing constants) at the current modes, and
  // the arrowhead Hessian pieces. Stores per-row eta terms.
  double local(int g, double u, const double* v) {
    const int b0 = s_.group_block_begin[static_cast<std::size_t>(g)];
    const int b1 = s_.group_block_begin[static_cast<std::size_t>(g) + 1];
    double j = -0.5 * u * u * pg_;
    double gu = -u * pg_;
    double huu = pg_;
    for (int b = b0; b < b1; ++b) {
      const double vb = s_.two_level ? v[b - b0] : 0.0;
      double sd1 = 0.0, sw = 0.0;
      for (Eigen::Index i : s_.block_rows[static_cast<std::size_t>(b)]) {
        const auto t = nb::eta_terms(d_.y[i], ef_[i] + u + vb, alpha_);
        terms_[static_cast<std::size_t>(i)] = t;
        j += t.rest;
        sd1 += t.d1;
        sw += t.w;
      }
      gu += sd1;
      huu += sw;
      if (s_.two_level) {
        j -= 0.5 * vb * vb * pr_;
        gb_[b] = sd1 - vb * pr_;
        hub_[b] = sw;
        hbb_[b] = sw + pr_;
      }
    }
    gu_ = gu;
    huu_[g] = huu;
    if (s_.two_level) {
      double sc = huu;
      for (int b = b0; b < b1; ++b) sc -= hub_[b] * hub_[b] / hbb_[b];
      schur_[g] = sc;
    }
    return j;
  }

  // Newton step from the current gradient and Hessian of group g.
  void newton_step(int g, double* du, std::vector<double>& dv) {
    const int b0 = s_.group_block_begin[static_cast<std::size_t>(g)];
    const int b1 = s_.group_block_begin[static_cast<std::size_t>(g) + 1];
    if (!s_.two_level) {
      *du = gu_ / huu_[g];
      return;
    }
    double num = gu_;
    for (int b = b0; b < b1; ++b) num -= hub_[b] * gb_[b] / hbb_[b];
    *du = num / schur_[g];
    dv.resize(static_cast<std::size_t>(b1 - b0));
    for (int b = b0; b < b1; ++b) dv[static_cast<std::size_t>(b - b0)] = (gb_[b] - hub_[b] * *du) / hbb_[b];
  }

  double solve_group(int g) {
    const int b0 = s_.group_block_begin[static_cast<std::size_t>(g)];
    const int b1 = s_.group_block_begin[static_cast<std::size_t>(g) + 1];
    const auto nb = static_cast<std::size_t>(b1 - b0);
    double u = u_[g];
    std::vector<double> v(nb, 0.0), dv(nb, 0.0), trial(nb, 0.0);
    if (s_.two_level) {
      for (std::size_t k = 0; k < nb; ++k) v[k] = v_[b0 + static_cast<int>(k)];
    }
    double j = local(g, u, v.data());
    bool fresh = true;  // stored terms correspond to (u, v)
    for (int it = 0; it < 200 && std::isfinite(j); ++it) {
      double du = 0.0;
      newton_step(g, &du, dv);
      double big = std::abs(du);
      for (std::size_t k = 0; k < nb && s_.two_level; ++k) big = std::max(big, std::abs(dv[k]));
      if (big < 1e-10) break;
      double t = 1.0;
      bool accepted = false;
      for (int half = 0; half < 60; ++half, t *= 0.5) {
        const double tu = u + t * du;
        for (std::size_t k = 0; k < nb && s_.two_level; ++k) trial[k] = v[k] + t * dv[k];
        const double jt = local(g, tu, trial.data());
        fresh = false;
        if (jt >= j - 1e-13 * (1.0 + std::abs(j))) {
          u = tu;
          v.swap(trial);
          j = jt;
          accepted = fresh = true;
          break;
        }
      }
      if (!accepted || t * big < 1e-10) break;
    }
    if (!fresh) j = local(g, u, v.data());
    u_[g] = u;
    for (std::size_t k = 0; k < nb && s_.two_level; ++k) v_[b0 + static_cast<int>(k)] = v[k];
    return j;
  }

  Eigen::MatrixXd group_scores() const {
    const Eigen::Index p = p_;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(s_.n_groups, k_);
    Eigen::VectorXd wx(p);
    Eigen::VectorXd dsum(p);
    std::vector<Eigen::VectorXd> wxb;
    for (int g = 0; g < s_.n_groups; ++g) {
      const int b0 = s_.group_block_begin[static_cast<std::size_t>(g)];
      const int b1 = s_.group_block_begin[static_cast<std::size_t>(g) + 1];
      const double u = u_[g];
      const double sg = s_.two_level ? schur_[g] : huu_[g];
      auto row = out.row(g);

      // Per block: leverage s_b, m_b = sum w_eta s_b, and column sums.
      double tau_direct = counts_[static_cast<std::size_t>(g)].tau_score(alpha_);
      double tau_trace = 0.0;
      double cu_tau = 0.0;
      Eigen::VectorXd gx = Eigen::VectorXd::Zero(p);  // sum x (d1 - 0.5 w_eta s)
      Eigen::VectorXd wx_total = Eigen::VectorXd::Zero(p);
      wxb.assign(static_cast<std::size_t>(b1 - b0), Eigen::VectorXd::Zero(p));
      std::vector<double> m(static_cast<std::size_t>(b1 - b0));
      std::vector<double> cb_tau(static_cast<std::size_t>(b1 - b0));
      for (int b = b0; b < b1; ++b) {
        const auto k = static_cast<std::size_t>(b - b0);
        double lev;
        if (s_.two_level) {
          const double c = hub_[b] / hbb_[b];
          lev = (1.0 - c) * (1.0 - c) / sg + 1.0 / hbb_[b];
        } else {
          lev = 1.0 / sg;
        }
        double mb = 0.0, ct = 0.0;
        for (Eigen::Index i : s_.block_rows[k + static_cast<std::size_t>(b0)]) {
          const auto& t = terms_[static_cast<std::size_t>(i)];
          mb += t.w_eta * lev;
          tau_direct += t.tau;
          tau_trace += t.w_tau * lev;
          ct += t.d1_tau;
          gx.noalias() += (t.d1 - 0.5 * t.w_eta * lev) * d_.x.row(i).transpose();
          wxb[k].noalias() += t.w * d_.x.row(i).transpose();
        }
        m[k] = mb;
        cb_tau[k] = ct;
        cu_tau += ct;
        wx_total += wxb[k];
      }
      double msum = 0.0;
      for (double mb : m) msum += mb;

      // sum_b m_b (d_u + d_b) for H d = c.
      auto indirect_scalar = [&](double cu, const std::vector<double>* cb) {
        if (!s_.two_level) return msum * cu / sg;
        double num = cu;
        for (int b = b0; b < b1; ++b) {
          const double c = cb ? (*cb)[static_cast<std::size_t>(b - b0)] : 0.0;
          num -= hub_[b] * c / hbb_[b];
        }
        const double du = num / sg;
        double acc = 0.0;
        for (int b = b0; b < b1; ++b) {
          const auto k = static_cast<std::size_t>(b - b0);
          const double c = cb ? (*cb)[k] : 0.0;
          acc += m[k] * (du + (c - hub_[b] * du) / hbb_[b]);
        }
        return acc;
      };

      // beta: c_u = -sum_b wx_b, c_b = -wx_b.
      Eigen::VectorXd ind(p);
      if (!s_.two_level) {
        ind = -msum * wx_total / sg;
      } else {
        Eigen::VectorXd num = -wx_total;
        for (int b = b0; b < b1; ++b) num += hub_[b] / hbb_[b] * wxb[static_cast<std::size_t>(b - b0)];
        const Eigen::VectorXd du = num / sg;
        ind = Eigen::VectorXd::Zero(p);
        for (int b = b0; b < b1; ++b) {
          const auto k = static_cast<std::size_t>(b - b0);
          ind += m[k] * (du + (-wxb[k] - hub_[b] * du) / hbb_[b]);
        }
      }
      row.head(p) = gx - 0.5 * ind;

      row[p] = tau_direct - 0.5 * (tau_trace + indirect_scalar(cu_tau, &cb_tau));

      // log var(group): c_u = u / var.
      const double hinv_uu = 1.0 / sg;
      row[p + 1] = 0.5 * u * u * pg_ - 0.5 -
                   0.5 * (-pg_ * hinv_uu + indirect_scalar(u * pg_, nullptr));

      if (s_.two_level) {
        double dj = 0.0, tr = 0.0;
        std::vector<double> cb(static_cast<std::size_t>(b1 - b0));
        for (int b = b0; b < b1; ++b) {
          const double vb = v_[b];
          const double c = hub_[b] / hbb_[b];
          dj += 0.5 * vb * vb * pr_ - 0.5;
          tr += 1.0 / hbb_[b] + c * c / sg;
          cb[static_cast<std::size_t>(b - b0)] = vb * pr_;
        }
        row[p + 2] = dj - 0.5 * (-pr_ * tr + indirect_scalar(0.0, &cb));
      }
    }
    return out;
  }

  const DesignTable& d_;
  Structure s_;
  Eigen::Index p_ = 0;
  Eigen::Index k_ = 0;
  std::vector<nb::CountTerms> counts_;
  Eigen::VectorXd u_, v_;
  Eigen::VectorXd ef_;
  std::vector<nb::EtaTerms> terms_;
  Eigen::VectorXd hbb_, hub_, gb_, huu_, schur_;
  double gu_ = 0.0;
  double alpha_ = 1.0, pg_ = 1.0, pr_ = 1.0;
};

struct Bounds {
  Eigen::VectorXd lo, hi;
};

Bounds make_bounds(Eigen::Index p, Eigen::Index k) {
  Bounds b{Eigen::VectorXd::Constant(k, -kInf), Eigen::VectorXd::Constant(k, kInf)};
  b.lo[p] = nb::kMinLnAlpha;
  b.hi[p] = nb::kMaxLnAlpha;
  for (Eigen::Index j = p + 1; j < k; ++j) {
    b.lo[j] = kMinLogVar;
    b.hi[j] = kMaxLogVar;
  }
  return b;
}

// Objective wrapper: f = -loglik, g = -gradient.
struct Objective {
  Laplace& model;
  int evaluations = 0;

  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    ++evaluations;
    Eigen::MatrixXd sc;
    const double ll = model.evaluate(x, g ? &sc : nullptr);
    if (!std::isfinite(ll)) return kInf;
    if (g) {
      *g = -sc.colwise().sum().transpose();
      if (!g->allFinite()) return kInf;
    }
    return -ll;
  }
};

std::vector<Eigen::Index> free_set(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                                   const Bounds& b) {
  std::vector<Eigen::Index> out;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const bool at_lo = x[j] <= b.lo[j] + 1e-12 && g[j] > 0.0;
    const bool at_hi = x[j] >= b.hi[j] - 1e-12 && g[j] < 0.0;
    if (!at_lo && !at_hi) out.push_back(j);
  }
  return out;
}

double projected_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Bounds& b) {
  double m = 0.0;
  for (Eigen::Index j : free_set(x, g, b)) m = std::max(m, std::abs(g[j]));
  return m;
}

// Central-difference Hessian of f over `idx`, from the analytic gradient.
Eigen::MatrixXd fd_hessian(Objective& f, const Eigen::VectorXd& x,
                           const std::vector<Eigen::Index>& idx, const Bounds& b) {
  const auto m = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd h(m, m);
  Eigen::VectorXd gp, gm;
  for (Eigen::Index a = 0; a < m; ++a) {
    const Eigen::Index j = idx[static_cast<std::size_t>(a)];
    const double step = 1e-5 * std::max(1.0, std::abs(x[j]));
    Eigen::VectorXd xp = x, xm = x;
    double hp = step, hm = step;
    if (x[j] + step > b.hi[j]) hp = 0.0;
    if (x[j] - step < b.lo[j]) hm = 0.0;
    xp[j] += hp;
    xm[j] -= hm;
    f(xp, &gp);
    f(xm, &gm);
    for (Eigen::Index c = 0; c < m; ++c) {
      h(c, a) = (gp[idx[static_cast<std::size_t>(c)]] - gm[idx[static_cast<std::size_t>(c)]]) /
                (hp + hm);
    }
  }
  f(x, &gp);  // restore warm-start modes at x
  return 0.5 * (h + h.transpose());
}

// Inverse of a symmetric matrix with eigenvalues replaced by their absolute
// values (floored), usable as a descent metric.
Eigen::MatrixXd pd_inverse(const Eigen::MatrixXd& h) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
  Eigen::VectorXd ev = es.eigenvalues().cwiseAbs();
  const double top = std::max(ev.maxCoeff(), 1e-8);
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = 1.0 / std::max(ev[i], 1e-8 * top);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::VectorXd project(Eigen::VectorXd x, const Bounds& b) {
  return x.cwiseMax(b.lo).cwiseMin(b.hi);
}

struct OptResult {
  Eigen::VectorXd x;
  double f = kInf;
  Eigen::VectorXd g;
  int iterations = 0;
  bool converged = false;
};

// Projected quasi-Newton with Armijo backtracking; the metric starts from the
// finite-difference Hessian and is refreshed from it when BFGS stalls.
OptResult minimize(Objective& f, Eigen::VectorXd x, const Bounds& b, double tol, int max_it) {
  OptResult r;
  x = project(std::move(x), b);
  Eigen::VectorXd g;
  double fx = f(x, &g);
  if (!std::isfinite(fx)) throw ConvergenceError("mixed model objective is not finite at the start");
  const Eigen::Index k = x.size();
  std::vector<Eigen::Index> all(static_cast<std::size_t>(k));
  for (Eigen::Index j = 0; j < k; ++j) all[static_cast<std::size_t>(j)] = j;
  Eigen::MatrixXd hinv = pd_inverse(fd_hessian(f, x, all, b));
  int stalls = 0;

  for (int it = 1; it <= max_it; ++it) {
    r.iterations = it;
    if (projected_norm(x, g, b) < tol) {
      r.converged = true;
      break;
    }
    const auto fr = free_set(x, g, b);
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(k);
    for (Eigen::Index a : fr) {
      double s = 0.0;
      for (Eigen::Index c : fr) s -= hinv(a, c) * g[c];
      dir[a] = s;
    }
    if (!(dir.dot(g) < 0.0)) {
      for (Eigen::Index a : fr) dir[a] = -g[a] * (hinv(a, a) > 0.0 ? hinv(a, a) : 1e-4);
    }
    // Cap very long steps; every parameter lives on a log scale.
    const double big = dir.cwiseAbs().maxCoeff();
    if (big > 5.0) dir *= 5.0 / big;

    double t = 1.0;
    Eigen::VectorXd xn, gn;
    double fn = kInf;
    bool ok = false;
    for (int half = 0; half < 50; ++half, t *= 0.5) {
      xn = project(x + t * dir, b);
      fn = f(xn, &gn);
      if (fn <= fx + 1e-4 * g.dot(xn - x)) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      f(x, &g);  // restore modes
      if (++stalls > 2) break;
      hinv = pd_inverse(fd_hessian(f, x, all, b));
      continue;
    }
    const Eigen::VectorXd s = xn - x;
    const Eigen::VectorXd yv = gn - g;
    x = xn;
    g = gn;
    const double fprev = fx;
    fx = fn;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd i = Eigen::MatrixXd::Identity(k, k);
      hinv = (i - rho * s * yv.transpose()) * hinv * (i - rho * yv * s.transpose()) +
             rho * s * s.transpose();
    }
    // Newton refresh when progress stalls short of tolerance.
    if (std::abs(fprev - fx) < 1e-12 * (1.0 + std::abs(fx)) && projected_norm(x, g, b) >= tol) {
      const auto fr2 = free_set(x, g, b);
      Eigen::MatrixXd h = fd_hessian(f, x, fr2, b);
      Eigen::MatrixXd hi = pd_inverse(h);
      hinv.setZero();
      for (std::size_t a = 0; a < fr2.size(); ++a) {
        for (std::size_t c = 0; c < fr2.size(); ++c) {
          hinv(fr2[a], fr2[c]) = hi(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
        }
      }
      for (Eigen::Index j = 0; j < k; ++j) {
        if (hinv(j, j) == 0.0) hinv(j, j) = 1e-4;
      }
    }
  }
  if (!r.converged && projected_norm(x, g, b) < tol) r.converged = true;
  r.x = x;
  r.f = fx;
  r.g = g;
  return r;
}

// Newton polish with the finite-difference Hessian over the free set.
void polish(Objective& f, OptResult& r, const Bounds& b, double tol) {
  for (int it = 0; it < 20 && projected_norm(r.x, r.g, b) >= tol * 1e-2; ++it) {
    const auto fr = free_set(r.x, r.g, b);
    const Eigen::MatrixXd h = fd_hessian(f, r.x, fr, b);
    Eigen::LLT<Eigen::MatrixXd> llt(h);
    if (llt.info() != Eigen::Success) break;
    Eigen::VectorXd gf(static_cast<Eigen::Index>(fr.size()));
    for (std::size_t a = 0; a < fr.size(); ++a) gf[static_cast<Eigen::Index>(a)] = r.g[fr[a]];
    const Eigen::VectorXd step = -llt.solve(gf);
    bool ok = false;
    double t = 1.0;
    for (int half = 0; half < 30; ++half, t *= 0.5) {
      Eigen::VectorXd xn = r.x;
      for (std::size_t a = 0; a < fr.size(); ++a) xn[fr[a]] += t * step[static_cast<Eigen::Index>(a)];
      xn = project(std::move(xn), b);
      Eigen::VectorXd gn;
      const double fn = f(xn, &gn);
      if (fn <= r.f + 1e-12 * (1.0 + std::abs(r.f))) {
        const bool better = projected_norm(xn, gn, b) < projected_norm(r.x, r.g, b) || fn < r.f;
        if (!better) break;
        r.x = xn;
        r.f = fn;
        r.g = gn;
        ok = true;
        break;
      }
    }
    if (!ok) {
      f(r.x, &r.g);
      break;
    }
  }
  if (projected_norm(r.x, r.g, b) < tol) r.converged = true;
}

}  // namespace

namespace nb {

LaplaceValue laplace_loglik(const DesignTable& d, const std::vector<std::string>& levels,
                            const Eigen::VectorXd& theta, bool with_gradient) {
  Laplace model(d, make_structure(d, levels));
  if (theta.size() != model.size()) throw DataError("parameter vector has the wrong length");
  LaplaceValue out;
  Eigen::MatrixXd sc;
  out.loglik = model.evaluate(theta, with_gradient ? &sc : nullptr);
  if (with_gradient) out.gradient = sc.colwise().sum().transpose();
  return out;
}

}  // namespace nb

namespace {

std::vector<std::string> parameter_names(const DesignTable& d, bool two_level) {
  std::vector<std::string> names = d.columns;
  names.emplace_back("ln_alpha");
  names.emplace_back("log_var_group");
  if (two_level) names.emplace_back("log_var_region");
  return names;
}

}  // namespace

FitResult fit_nb_mixed(const DesignTable& d, const std::vector<std::string>& levels,
                       const FitOptions& opt) {
  detail::validate_counts(d);
  if ((d.weights.array() != 1.0).any()) {
    throw ConfigError("prior weights are not supported with random effects");
  }
  check_full_rank(d.x, d.columns);
  Laplace model(d, make_structure(d, levels));
  const Eigen::Index p = d.cols();
  const Eigen::Index k = model.size();
  const bool two = model.two_level();
  Bounds bounds = make_bounds(p, k);

  Eigen::VectorXd x0(k);
  x0.head(p) = detail::poisson_start(d);
  x0[p] = opt.init_ln_alpha;
  for (Eigen::Index j = p + 1; j < k; ++j) x0[j] = opt.init_log_variance;
  // One group: its intercept is absorbed by the fixed intercept, so the
  // variance is pinned at the lower bound where the likelihood is maximal.
  if (model.structure().n_groups < 2) {
    bounds.hi[p + 1] = bounds.lo[p + 1];
    x0[p + 1] = bounds.lo[p + 1];
  }

  Objective f{model};
  OptResult r = minimize(f, x0, bounds, opt.gradient_tolerance, 5 * opt.max_iterations);
  polish(f, r, bounds, opt.gradient_tolerance);

  FitResult fit;
  fit.terms = d.columns;
  fit.n_obs = static_cast<std::size_t>(d.rows());
  fit.beta = r.x.head(p);
  fit.ln_alpha = r.x[p];
  fit.alpha_at_boundary = r.x[p] <= nb::kMinLnAlpha + 1e-9;
  fit.loglik = -r.f;
  fit.convergence.iterations = r.iterations;
  fit.convergence.gradient_norm = projected_norm(r.x, r.g, bounds);
  fit.convergence.status = r.converged ? FitStatus::converged : FitStatus::max_iterations;
  fit.mu = nb::linear_predictor(d.x, fit.beta, d.offset).array().exp();

  // Free parameters for the covariance: everything not pinned at a bound.
  std::vector<Eigen::Index> fr;
  for (Eigen::Index j = 0; j < k; ++j) {
    const bool pinned = r.x[j] <= bounds.lo[j] + 1e-9 || r.x[j] >= bounds.hi[j] - 1e-9;
    if (!pinned) fr.push_back(j);
  }
  const auto names = parameter_names(d, two);
  const Eigen::MatrixXd h = fd_hessian(f, r.x, fr, bounds);
  bool ridged = false;
  fit.covariance = detail::inverse_spd(h, opt.ridge, &ridged);
  if (ridged) fit.notes.push_back("ridge applied to a near-singular Hessian");
  for (Eigen::Index j : fr) fit.covariance_terms.push_back(names[static_cast<std::size_t>(j)]);
  auto pos = [&](Eigen::Index j) -> std::optional<Eigen::Index> {
    auto it = std::find(fr.begin(), fr.end(), j);
    if (it == fr.end()) return std::nullopt;
    return static_cast<Eigen::Index>(it - fr.begin());
  };

  fit.se = Eigen::VectorXd::Constant(p, NAN);
  for (Eigen::Index j = 0; j < p; ++j) {
    if (auto a = pos(j)) fit.se[j] = std::sqrt(fit.covariance(*a, *a));
  }
  if (auto a = pos(p)) fit.ln_alpha_se = std::sqrt(fit.covariance(*a, *a));
  if (fit.alpha_at_boundary) fit.notes.push_back("alpha at lower boundary");

  const Structure& st = model.structure();
  for (Eigen::Index j = p + 1; j < k; ++j) {
    VarianceComponent vc;
    vc.level = j == p + 1 ? "group" : "region";
    vc.variance = std::exp(r.x[j]);
    vc.at_boundary = r.x[j] <= kMinLogVar + 1e-9;
    if (auto a = pos(j)) vc.se = vc.variance * std::sqrt(fit.covariance(*a, *a));
    if (vc.level == "group" && st.n_groups < 2) {
      vc.identified = false;
      fit.notes.push_back("group variance is not identified with a single group");
    }
    if (vc.at_boundary) fit.notes.push_back(vc.level + " variance at lower boundary");
    fit.variance_components.push_back(vc);
  }

  // Modes at the optimum, keyed by panel index.
  model.evaluate(r.x, nullptr);
  int max_g = static_cast<int>(d.n_groups) - 1;
  for (int g : st.group_panel) max_g = std::max(max_g, g);
  fit.group_modes = Eigen::VectorXd::Zero(max_g + 1);
  for (int g = 0; g < st.n_groups; ++g) fit.group_modes[st.group_panel[static_cast<std::size_t>(g)]] = model.group_modes()[g];
  if (two) {
    int max_r = static_cast<int>(d.n_regions) - 1;
    for (int b : st.block_panel) max_r = std::max(max_r, b);
    fit.region_modes = Eigen::VectorXd::Zero(max_r + 1);
    for (int b = 0; b < st.n_blocks; ++b) {
      fit.region_modes[st.block_panel[static_cast<std::size_t>(b)]] = model.block_modes()[b];
    }
  }

  // Robust covariance from per-group scores; only the top level separates.
  fit.cluster = opt.cluster.value_or(ClusterLevel::group);
  if (fit.cluster != ClusterLevel::group) {
    throw ConfigError("mixed-model robust errors cluster on the top random level (group)");
  }
  fit.n_clusters = static_cast<std::size_t>(st.n_groups);
  fit.robust_se = Eigen::VectorXd::Constant(p, NAN);
  if (st.n_groups >= 2) {
    Eigen::MatrixXd sc;
    model.evaluate(r.x, &sc);
    Eigen::MatrixXd scf(sc.rows(), static_cast<Eigen::Index>(fr.size()));
    for (std::size_t a = 0; a < fr.size(); ++a) scf.col(static_cast<Eigen::Index>(a)) = sc.col(fr[a]);
    fit.robust_covariance = detail::sandwich(fit.covariance, scf);
    for (Eigen::Index j = 0; j < p; ++j) {
      if (auto a = pos(j)) fit.robust_se[j] = std::sqrt(fit.robust_covariance(*a, *a));
    }
    if (auto a = pos(p)) fit.ln_alpha_robust_se = std::sqrt(fit.robust_covariance(*a, *a));
  } else {
    fit.notes.push_back("robust standard errors need at least 2 groups");
  }
  fit.z = fit.beta.array() / fit.robust_se.array();
  fit.p = fit.z.unaryExpr([](double z) { return normal_two_sided_p(z); });
  return fit;
}

namespace detail {

Eigen::VectorXd mixed_robust_se(const FitResult& fit, const DesignTable& d, ClusterLevel cluster) {
  if (cluster != ClusterLevel::group) {
    throw ConfigError("mixed-model robust errors cluster on the top random level (group)");
  }
  if (fit.beta.size() != d.cols()) throw DataError("fit does not match design columns");
  if (fit.robust_covariance.size() == 0) return Eigen::VectorXd::Constant(d.cols(), NAN);
  Eigen::VectorXd out(d.cols());
  for (Eigen::Index j = 0; j < d.cols(); ++j) {
    const auto it = std::find(fit.covariance_terms.begin(), fit.covariance_terms.end(),
                              fit.terms[static_cast<std::size_t>(j)]);
    out[j] = it == fit.covariance_terms.end()
                 ? NAN
                 : std::sqrt(fit.robust_covariance(it - fit.covariance_terms.begin(),
                                                   it - fit.covariance_terms.begin()));
  }
  return out;
}

}  // namespace detail

}  // namespace netspill
