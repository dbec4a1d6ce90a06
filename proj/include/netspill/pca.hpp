#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace netspill {

struct DisadvantageIndex {
  std::vector<std::string> indicators;
  Eigen::VectorXd scores;    // per row; mean 0, sample variance == eigenvalue
  double eigenvalue = 0.0;   // largest eigenvalue of the correlation matrix
  Eigen::VectorXd loadings;  // unit-norm eigenvector, first entry >= 0
};

// First principal component of the standardized indicators. The sign is
// anchored so the first-listed indicator (unemployment rate in the usual
// setup) has a nonnegative loading.
DisadvantageIndex disadvantage_index(
    const std::vector<std::pair<std::string, Eigen::VectorXd>>& indicators);

}  // namespace netspill
