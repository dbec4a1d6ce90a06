#pragma once

#include <vector>

#include <Eigen/Dense>

#include "netspill/negbin.hpp"

namespace netspill::detail {

void validate_counts(const DesignTable& d);
Eigen::VectorXd xt_times(const Eigen::MatrixXd& x, const Eigen::VectorXd& v);
Eigen::MatrixXd weighted_cross(const Eigen::MatrixXd& x, const Eigen::VectorXd& w);
Eigen::MatrixXd inverse_spd(const Eigen::MatrixXd& a, double ridge, bool* ridged);
Eigen::VectorXd poisson_start(const DesignTable& d);
// Dense 0-based cluster id per row.
std::vector<int> cluster_ids(const DesignTable& d, ClusterLevel level, std::size_t* n_clusters);
// bread * (G/(G-1)) sum_c s_c s_c' * bread
Eigen::MatrixXd sandwich(const Eigen::MatrixXd& bread, const Eigen::MatrixXd& cluster_scores);
Eigen::VectorXd mixed_robust_se(const FitResult& fit, const DesignTable& d, ClusterLevel cluster);

}  // namespace netspill::detail
