#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "netspill/types.hpp"

namespace netspill {

enum class NetworkFilter { all, contiguous_only, noncontiguous_only };

std::string_view to_string(NetworkFilter f);
NetworkFilter parse_network_filter(std::string_view s);

struct ExposureOptions {
  NetworkFilter filter = NetworkFilter::all;
  // Self-flows (origin == dest) are excluded from both the weighted
  // destinations and the outgoing total unless this is set.
  bool include_self_flows = false;
};

inline constexpr double kRateScale = 100000.0;

// cases / population * 100,000. Signed counts are allowed.
double case_rate(double cases, double population);

using RateMap = std::map<RegionId, double>;

struct SpatialLag {
  double value = 0.0;
  bool isolated = false;  // no neighbors; value is 0 by convention
};

// Flow-share weighted mean of destination rates. nullopt when the home region
// has no retained outgoing flow after filtering.
std::optional<double> network_lag(const FlowNetwork& net, const RateMap& rates,
                                  const RegionId& home, const ContiguityGraph& contig,
                                  const ExposureOptions& opts = {});
SpatialLag spatial_lag(const ContiguityGraph& contig, const RateMap& rates, const RegionId& home);

// Same weighting applied to current - prior rates.
std::optional<double> network_delta_lag(const FlowNetwork& net, const RateMap& prior,
                                        const RateMap& current, const RegionId& home,
                                        const ContiguityGraph& contig,
                                        const ExposureOptions& opts = {});
SpatialLag spatial_delta_lag(const ContiguityGraph& contig, const RateMap& prior,
                             const RateMap& current, const RegionId& home);

// Index-based form of the lag operators over a fixed region ordering. Weights
// are stored in CSR layout and evaluated with the gather kernels.
class ExposureEngine {
 public:
  ExposureEngine(const std::vector<RegionId>& regions, const FlowNetwork& net,
                 const ContiguityGraph& contig, const ExposureOptions& opts = {});

  std::size_t size() const noexcept { return n_; }
  const ExposureOptions& options() const noexcept { return opts_; }

  std::optional<double> network(std::size_t home, std::span<const double> rates) const;
  SpatialLag spatial(std::size_t home, std::span<const double> rates) const;

  // Normalized network weights of `home` (sum to 1) and their destinations.
  std::span<const double> network_weights(std::size_t home) const;
  std::span<const std::uint32_t> network_destinations(std::size_t home) const;
  // Share of the home's unfiltered retained outflow that goes to contiguous
  // destinations. nullopt when the home has no retained outflow.
  std::optional<double> contiguous_share(std::size_t home) const;

 private:
  struct Csr {
    std::vector<std::size_t> offset;
    std::vector<std::uint32_t> index;
    std::vector<double> weight;
  };
  static double evaluate(const Csr& m, std::size_t home, std::span<const double> rates);

  std::size_t n_ = 0;
  ExposureOptions opts_;
  Csr network_;
  Csr spatial_;
  std::vector<double> contiguous_share_;  // NaN when undefined
};

inline constexpr std::string_view kNetworkLag = "network_lag";
inline constexpr std::string_view kNetworkDelta = "network_delta";
inline constexpr std::string_view kSpatialLag = "spatial_lag";
inline constexpr std::string_view kSpatialDelta = "spatial_delta";
inline constexpr std::string_view kOwnRateLag = "own_rate_lag";

// All matrices are region x period, rates per 100,000. NaN marks an
// unavailable cell: the first panel period (no prior period), network cells
// whose filter retained no flow, and delta cells in cross-sectional mode.
struct LagColumnSet {
  Mode mode = Mode::panel;
  std::vector<RegionId> regions;
  std::vector<std::string> period_labels;
  Eigen::MatrixXd network_lag;
  Eigen::MatrixXd network_delta;
  Eigen::MatrixXd spatial_lag;
  Eigen::MatrixXd spatial_delta;
  Eigen::MatrixXd own_rate_lag;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> network_missing;
  std::vector<bool> isolated;  // per region

  const Eigen::MatrixXd* column(std::string_view name) const;
  static std::vector<std::string_view> names();

  bool operator==(const LagColumnSet& o) const;
};

// Per-period case rates from the signed new-case series.
Eigen::MatrixXd case_rates(const Panel& panel);

// In panel mode lags use period t-1 rates (deltas use t and t-1). In
// cross-sectional mode a single column is built from cumulative rates.
LagColumnSet build_lag_columns(const Panel& panel, const FlowNetwork& net,
                               const ContiguityGraph& contig, const ExposureOptions& opts = {},
                               Mode mode = Mode::panel);

}  // namespace netspill
