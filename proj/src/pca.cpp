#include "netspill/pca.hpp"

#include <cmath>

#include "netspill/errors.hpp"

namespace netspill {

DisadvantageIndex disadvantage_index(
    const std::vector<std::pair<std::string, Eigen::VectorXd>>& indicators) {
  if (indicators.size() < 2) throw DataError("disadvantage index needs at least 2 indicators");
  const Eigen::Index n = indicators.front().second.size();
  const auto k = static_cast<Eigen::Index>(indicators.size());
  if (n < 2) throw DataError("disadvantage index needs at least 2 rows");

  Eigen::MatrixXd z(n, k);
  DisadvantageIndex out;
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto& [name, col] = indicators[static_cast<std::size_t>(j)];
    if (col.size() != n) throw DataError("indicator '" + name + "' has a different length");
    if (col.hasNaN()) throw DataError("indicator '" + name + "' has missing values");
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / static_cast<double>(n - 1);
    if (!(var > 0.0)) throw DataError("indicator '" + name + "' has zero variance");
    z.col(j) = (col.array() - mean) / std::sqrt(var);
    out.indicators.push_back(name);
  }

  const Eigen::MatrixXd corr = (z.transpose() * z) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr);
  if (eig.info() != Eigen::Success) throw DataError("eigen-decomposition failed");
  out.eigenvalue = eig.eigenvalues()(k - 1);
  out.loadings = eig.eigenvectors().col(k - 1);
  if (out.loadings(0) < 0.0) out.loadings = -out.loadings;
  out.scores = z * out.loadings;
  return out;
}

}  // namespace netspill
