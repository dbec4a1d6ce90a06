#pragma once

#include <cstddef>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "netspill/types.hpp"

namespace netspill {

struct RawObservation {
  RegionId region;
  Date date;
  double cum_cases;
  double cum_deaths;
};

// Rows of cumulative counts; per region the dates must be strictly increasing.
using RawCumulativeSeries = std::vector<RawObservation>;

// Region attributes from the covariates file. Region order is file order and
// becomes the panel's region order.
struct CovariateTable {
  std::vector<RegionId> regions;
  std::vector<std::string> group;  // per region
  Eigen::VectorXd population;
  std::vector<std::pair<std::string, Eigen::VectorXd>> columns;
};

enum class UnknownRegionPolicy { drop_warn, fail };

// Period k covers [start + k*length, start + (k+1)*length - 1]. New counts
// for period k are cum(last day of k) - cum(day before first day of k), so
// the raw series needs the day before `start` and the last day of every
// period.
struct PeriodScheme {
  Date start;
  int length_days = 14;
  int n_periods = 10;
};

std::vector<Period> make_periods(const PeriodScheme& scheme);
// The n_periods + 1 dates whose cumulative values are differenced.
std::vector<Date> boundary_dates(const PeriodScheme& scheme);

struct BuildPanelResult {
  Panel panel;
  std::size_t clamp_warnings = 0;       // negative period differences set to 0
  std::size_t decreasing_warnings = 0;  // row-to-row decreases in a series
  std::size_t dropped_rows = 0;         // rows for regions absent from covariates
  std::vector<std::string> warnings;
};

BuildPanelResult build_panel(const RawCumulativeSeries& raw, const CovariateTable& covariates,
                             const PeriodScheme& scheme,
                             UnknownRegionPolicy policy = UnknownRegionPolicy::fail);

struct FlowParseResult {
  FlowNetwork network;
  std::size_t dropped = 0;
  std::vector<std::string> warnings;
};

struct ContiguityParseResult {
  ContiguityGraph graph;
  std::size_t asymmetric_pairs = 0;
  std::size_t dropped = 0;
  std::vector<std::string> warnings;
};

RawCumulativeSeries parse_cases(const std::filesystem::path& path);
CovariateTable parse_covariates(const std::filesystem::path& path);
// `known` restricts regions; nullptr accepts every region.
FlowParseResult parse_flows(const std::filesystem::path& path,
                            const std::set<RegionId>* known = nullptr,
                            UnknownRegionPolicy policy = UnknownRegionPolicy::fail);
ContiguityParseResult parse_contiguity(const std::filesystem::path& path,
                                       const std::set<RegionId>* known = nullptr,
                                       UnknownRegionPolicy policy = UnknownRegionPolicy::fail);

// 1 where value > mean (strict), else 0.
std::vector<double> above_average_indicator(std::span<const double> column);
// 1 where value >= cutoff, else 0.
std::vector<double> threshold_indicator(std::span<const double> column, double cutoff);

}  // namespace netspill
