#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "netspill/design.hpp"

namespace nbutil {

// NB2 draw as a gamma-Poisson mixture; alpha == 0 gives a Poisson draw.
inline double draw_nb(std::mt19937_64& g, double mu, double alpha) {
  if (alpha <= 0.0) return std::poisson_distribution<long long>(mu)(g);
  std::gamma_distribution<double> gam(1.0 / alpha, alpha);
  return static_cast<double>(std::poisson_distribution<long long>(mu * gam(g))(g));
}

// Design with an intercept plus standard normal covariates x1..xk.
inline netspill::DesignTable random_design(std::mt19937_64& g, Eigen::Index n, int k) {
  std::normal_distribution<double> z(0.0, 1.0);
  netspill::DesignTable d;
  d.outcome = "y";
  d.columns = {"_cons"};
  for (int j = 1; j <= k; ++j) d.columns.push_back("x" + std::to_string(j));
  d.x.resize(n, k + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.x(i, 0) = 1.0;
    for (int j = 1; j <= k; ++j) d.x(i, j) = z(g);
  }
  d.y = Eigen::VectorXd::Zero(n);
  d.offset = Eigen::VectorXd::Zero(n);
  d.weights = Eigen::VectorXd::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.group.push_back(0);
    d.region.push_back(static_cast<int>(i));
    d.period.push_back(0);
  }
  d.n_groups = 1;
  d.n_regions = static_cast<std::size_t>(n);
  return d;
}

// Fills y from mu = exp(x beta + offset + u_group + u_region).
inline void fill_outcome(std::mt19937_64& g, netspill::DesignTable& d, const Eigen::VectorXd& beta,
                         double alpha, const Eigen::VectorXd& u_group = {},
                         const Eigen::VectorXd& u_region = {}) {
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    double eta = d.x.row(i).dot(beta) + d.offset[i];
    const auto ui = static_cast<std::size_t>(i);
    if (u_group.size()) eta += u_group[d.group[ui]];
    if (u_region.size()) eta += u_region[d.region[ui]];
    d.y[i] = draw_nb(g, std::exp(eta), alpha);
  }
}

// Assigns rows to `groups` groups of `regions_per_group` regions, with
// consecutive rows sharing a region.
inline void assign_nesting(netspill::DesignTable& d, int groups, int regions_per_group) {
  const auto n = d.rows();
  const int n_regions = groups * regions_per_group;
  const Eigen::Index per_region = n / n_regions;
  d.group.assign(static_cast<std::size_t>(n), 0);
  d.region.assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int r = static_cast<int>(std::min<Eigen::Index>(i / per_region, n_regions - 1));
    d.region[static_cast<std::size_t>(i)] = r;
    d.group[static_cast<std::size_t>(i)] = r / regions_per_group;
  }
  d.n_groups = static_cast<std::size_t>(groups);
  d.n_regions = static_cast<std::size_t>(n_regions);
}

}  // namespace nbutil
