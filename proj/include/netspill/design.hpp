#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "netspill/exposure.hpp"
#include "netspill/types.hpp"

namespace netspill {

inline constexpr std::string_view kIntercept = "_cons";
inline constexpr std::string_view kPeriodToken = "period";

// One row per retained (region, period) cell, or one per region in
// cross-sectional mode. Column 0 of `x` is the intercept.
struct DesignTable {
  std::string outcome;
  std::vector<std::string> columns;
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd offset;
  Eigen::VectorXd weights;      // prior weights, 1 unless set by the caller
  std::vector<int> group;       // per row, panel group index
  std::vector<int> region;      // per row, panel region index
  std::vector<int> period;      // per row, panel period index (-1 cross-sectional)
  std::size_t n_groups = 0;
  std::size_t n_regions = 0;
  std::size_t dropped_rows = 0;  // cells whose lag values were unavailable

  Eigen::Index rows() const noexcept { return x.rows(); }
  Eigen::Index cols() const noexcept { return x.cols(); }
  std::optional<Eigen::Index> column_index(std::string_view name) const;

  bool operator==(const DesignTable& o) const;
};

// Pure function of its inputs. Rows whose used lag cells are unavailable are
// dropped; NaN in a used covariate is an error naming the offending cells.
// Period dummies use the first retained period as reference.
DesignTable build_design(const Panel& panel, const LagColumnSet* exposures,
                         const ModelSpec& spec);

}  // namespace netspill
