#include "netspill/exposure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "netspill/errors.hpp"
#include "netspill/kernels.hpp"

namespace netspill {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool retained(const RegionId& home, const RegionId& dest, const ContiguityGraph& contig,
              const ExposureOptions& opts) {
  if (home == dest) return opts.include_self_flows && opts.filter == NetworkFilter::all;
  switch (opts.filter) {
    case NetworkFilter::all:
      return true;
    case NetworkFilter::contiguous_only:
      return contig.adjacent(home, dest);
    case NetworkFilter::noncontiguous_only:
      return !contig.adjacent(home, dest);
  }
  return false;
}

double rate_of(const RateMap& rates, const RegionId& r) {
  auto it = rates.find(r);
  if (it == rates.end()) throw DataError("no rate for region " + r.code());
  return it->second;
}

// A convex combination cannot leave [lo, hi]; rounding may push it an ulp out.
double clamp_convex(double v, double lo, double hi) { return std::clamp(v, lo, hi); }

template <typename RateFn>
std::optional<double> network_impl(const FlowNetwork& net, const RegionId& home,
                                   const ContiguityGraph& contig, const ExposureOptions& opts,
                                   RateFn rate) {
  double total = 0.0;
  for (const auto& e : net.edges()) {
    if (e.origin == home && retained(home, e.dest, contig, opts)) total += e.commuters;
  }
  if (!(total > 0.0)) return std::nullopt;
  double acc = 0.0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& e : net.edges()) {
    if (e.origin != home || !retained(home, e.dest, contig, opts)) continue;
    const double r = rate(e.dest);
    acc += (e.commuters / total) * r;
    if (e.commuters > 0.0) {
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
  }
  return clamp_convex(acc, lo, hi);
}

template <typename RateFn>
SpatialLag spatial_impl(const ContiguityGraph& contig, const RegionId& home, RateFn rate) {
  const auto& nbrs = contig.neighbors(home);
  if (nbrs.empty()) return {0.0, true};
  const double w = 1.0 / static_cast<double>(nbrs.size());
  double acc = 0.0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& b : nbrs) {
    const double r = rate(b);
    acc += w * r;
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  return {clamp_convex(acc, lo, hi), false};
}

}  // namespace

std::string_view to_string(NetworkFilter f) {
  switch (f) {
    case NetworkFilter::all:
      return "all";
    case NetworkFilter::contiguous_only:
      return "contiguous";
    case NetworkFilter::noncontiguous_only:
      return "noncontiguous";
  }
  return "all";
}

NetworkFilter parse_network_filter(std::string_view s) {
  if (s == "all") return NetworkFilter::all;
  if (s == "contiguous" || s == "contiguous_only") return NetworkFilter::contiguous_only;
  if (s == "noncontiguous" || s == "noncontiguous_only") return NetworkFilter::noncontiguous_only;
  throw ConfigError("unknown network filter '" + std::string(s) + "'");
}

double case_rate(double cases, double population) {
  if (!(population > 0.0)) throw DataError("population must be positive to form a rate");
  return cases / population * kRateScale;
}

std::optional<double> network_lag(const FlowNetwork& net, const RateMap& rates,
                                  const RegionId& home, const ContiguityGraph& contig,
                                  const ExposureOptions& opts) {
  return network_impl(net, home, contig, opts,
                      [&](const RegionId& r) { return rate_of(rates, r); });
}

SpatialLag spatial_lag(const ContiguityGraph& contig, const RateMap& rates,
                       const RegionId& home) {
  return spatial_impl(contig, home, [&](const RegionId& r) { return rate_of(rates, r); });
}

std::optional<double> network_delta_lag(const FlowNetwork& net, const RateMap& prior,
                                        const RateMap& current, const RegionId& home,
                                        const ContiguityGraph& contig,
                                        const ExposureOptions& opts) {
  return network_impl(net, home, contig, opts, [&](const RegionId& r) {
    return rate_of(current, r) - rate_of(prior, r);
  });
}

SpatialLag spatial_delta_lag(const ContiguityGraph& contig, const RateMap& prior,
                             const RateMap& current, const RegionId& home) {
  return spatial_impl(contig, home, [&](const RegionId& r) {
    return rate_of(current, r) - rate_of(prior, r);
  });
}

ExposureEngine::ExposureEngine(const std::vector<RegionId>& regions, const FlowNetwork& net,
                               const ContiguityGraph& contig, const ExposureOptions& opts)
    : n_(regions.size()), opts_(opts) {
  std::unordered_map<std::string, std::uint32_t> index;
  for (std::size_t i = 0; i < n_; ++i) {
    index.emplace(regions[i].code(), static_cast<std::uint32_t>(i));
  }

  struct Entry {
    std::uint32_t dest;
    double commuters;
    bool contiguous;
  };
  std::vector<std::vector<Entry>> out(n_);
  for (const auto& e : net.edges()) {
    auto o = index.find(e.origin.code());
    if (o == index.end()) continue;
    auto d = index.find(e.dest.code());
    if (d == index.end()) {
      throw DataError("flow " + e.origin.code() + "->" + e.dest.code() +
                      " has a destination without a rate");
    }
    if (o->second == d->second && !opts.include_self_flows) continue;
    out[o->second].push_back({d->second, e.commuters, contig.adjacent(e.origin, e.dest)});
  }

  network_.offset.assign(1, 0);
  spatial_.offset.assign(1, 0);
  contiguous_share_.assign(n_, kNaN);
  for (std::size_t h = 0; h < n_; ++h) {
    double all_total = 0.0;
    double contig_total = 0.0;
    double kept_total = 0.0;
    for (const auto& en : out[h]) {
      const bool self = en.dest == h;
      all_total += en.commuters;
      if (en.contiguous) contig_total += en.commuters;
      const bool keep = self ? opts.filter == NetworkFilter::all
                             : (opts.filter == NetworkFilter::all ||
                                (opts.filter == NetworkFilter::contiguous_only) == en.contiguous);
      if (keep) kept_total += en.commuters;
    }
    if (all_total > 0.0) contiguous_share_[h] = contig_total / all_total;
    if (kept_total > 0.0) {
      for (const auto& en : out[h]) {
        const bool self = en.dest == h;
        const bool keep = self ? opts.filter == NetworkFilter::all
                               : (opts.filter == NetworkFilter::all ||
                                  (opts.filter == NetworkFilter::contiguous_only) ==
                                      en.contiguous);
        if (!keep) continue;
        network_.index.push_back(en.dest);
        network_.weight.push_back(en.commuters / kept_total);
      }
    }
    network_.offset.push_back(network_.index.size());

    const auto& nbrs = contig.neighbors(regions[h]);
    for (const auto& b : nbrs) {
      auto bi = index.find(b.code());
      if (bi == index.end()) {
        throw DataError("neighbor " + b.code() + " of " + regions[h].code() + " has no rate");
      }
      spatial_.index.push_back(bi->second);
      spatial_.weight.push_back(1.0 / static_cast<double>(nbrs.size()));
    }
    spatial_.offset.push_back(spatial_.index.size());
  }
}

double ExposureEngine::evaluate(const Csr& m, std::size_t home, std::span<const double> rates) {
  const std::size_t b = m.offset[home];
  const std::size_t e = m.offset[home + 1];
  const std::span<const double> w(m.weight.data() + b, e - b);
  const std::span<const std::uint32_t> idx(m.index.data() + b, e - b);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (w[k] > 0.0) {
      lo = std::min(lo, rates[idx[k]]);
      hi = std::max(hi, rates[idx[k]]);
    }
  }
  return clamp_convex(kernels::gather_dot(w, idx, rates), lo, hi);
}

std::optional<double> ExposureEngine::network(std::size_t home,
                                              std::span<const double> rates) const {
  if (network_.offset[home] == network_.offset[home + 1]) return std::nullopt;
  return evaluate(network_, home, rates);
}

SpatialLag ExposureEngine::spatial(std::size_t home, std::span<const double> rates) const {
  if (spatial_.offset[home] == spatial_.offset[home + 1]) return {0.0, true};
  return {evaluate(spatial_, home, rates), false};
}

std::span<const double> ExposureEngine::network_weights(std::size_t home) const {
  return {network_.weight.data() + network_.offset[home],
          network_.offset[home + 1] - network_.offset[home]};
}

std::span<const std::uint32_t> ExposureEngine::network_destinations(std::size_t home) const {
  return {network_.index.data() + network_.offset[home],
          network_.offset[home + 1] - network_.offset[home]};
}

std::optional<double> ExposureEngine::contiguous_share(std::size_t home) const {
  if (std::isnan(contiguous_share_[home])) return std::nullopt;
  return contiguous_share_[home];
}

const Eigen::MatrixXd* LagColumnSet::column(std::string_view name) const {
  if (name == kNetworkLag) return &network_lag;
  if (name == kNetworkDelta) return &network_delta;
  if (name == kSpatialLag) return &spatial_lag;
  if (name == kSpatialDelta) return &spatial_delta;
  if (name == kOwnRateLag) return &own_rate_lag;
  return nullptr;
}

std::vector<std::string_view> LagColumnSet::names() {
  return {kNetworkLag, kNetworkDelta, kSpatialLag, kSpatialDelta, kOwnRateLag};
}

namespace {

// NaN-aware exact equality.
bool same(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i];
    const double y = b.data()[i];
    if (!(x == y || (std::isnan(x) && std::isnan(y)))) return false;
  }
  return true;
}

}  // namespace

bool LagColumnSet::operator==(const LagColumnSet& o) const {
  return mode == o.mode && regions == o.regions && period_labels == o.period_labels &&
         same(network_lag, o.network_lag) && same(network_delta, o.network_delta) &&
         same(spatial_lag, o.spatial_lag) && same(spatial_delta, o.spatial_delta) &&
         same(own_rate_lag, o.own_rate_lag) &&
         (network_missing == o.network_missing).all() && isolated == o.isolated;
}

Eigen::MatrixXd case_rates(const Panel& panel) {
  Eigen::MatrixXd rates = panel.signed_cases();
  for (Eigen::Index r = 0; r < rates.rows(); ++r) {
    for (Eigen::Index t = 0; t < rates.cols(); ++t) {
      rates(r, t) = case_rate(rates(r, t), panel.population()[r]);
    }
  }
  return rates;
}

LagColumnSet build_lag_columns(const Panel& panel, const FlowNetwork& net,
                               const ContiguityGraph& contig, const ExposureOptions& opts,
                               Mode mode) {
  const ExposureEngine engine(panel.regions(), net, contig, opts);
  const auto nr = static_cast<Eigen::Index>(panel.n_regions());
  const Eigen::MatrixXd rates = case_rates(panel);

  LagColumnSet out;
  out.mode = mode;
  out.regions = panel.regions();
  out.isolated.assign(panel.n_regions(), false);
  for (std::size_t r = 0; r < panel.n_regions(); ++r) {
    out.isolated[r] = contig.neighbors(panel.regions()[r]).empty();
  }

  if (mode == Mode::cross_sectional) {
    if (panel.n_periods() < 1) throw DataError("cross-sectional lags need at least 1 period");
    out.period_labels = {"cumulative"};
    Eigen::VectorXd cum(nr);
    for (Eigen::Index r = 0; r < nr; ++r) {
      cum[r] = case_rate(panel.signed_cases().row(r).sum(), panel.population()[r]);
    }
    const std::span<const double> cs(cum.data(), static_cast<std::size_t>(nr));
    out.network_lag = Eigen::MatrixXd::Constant(nr, 1, kNaN);
    out.network_delta = Eigen::MatrixXd::Constant(nr, 1, kNaN);
    out.spatial_lag = Eigen::MatrixXd::Constant(nr, 1, kNaN);
    out.spatial_delta = Eigen::MatrixXd::Constant(nr, 1, kNaN);
    out.own_rate_lag = cum;
    out.network_missing.setConstant(nr, 1, false);
    for (Eigen::Index r = 0; r < nr; ++r) {
      const auto h = static_cast<std::size_t>(r);
      if (auto v = engine.network(h, cs)) {
        out.network_lag(r, 0) = *v;
      } else {
        out.network_missing(r, 0) = true;
      }
      out.spatial_lag(r, 0) = engine.spatial(h, cs).value;
    }
    return out;
  }

  if (panel.n_periods() < 2) throw DataError("panel lags need at least 2 periods");
  const auto np = static_cast<Eigen::Index>(panel.n_periods());
  for (const auto& p : panel.periods()) out.period_labels.push_back(p.label);
  out.network_lag = Eigen::MatrixXd::Constant(nr, np, kNaN);
  out.network_delta = out.network_lag;
  out.spatial_lag = out.network_lag;
  out.spatial_delta = out.network_lag;
  out.own_rate_lag = out.network_lag;
  out.network_missing.setConstant(nr, np, false);

  Eigen::VectorXd prior(nr);
  Eigen::VectorXd delta(nr);
  for (Eigen::Index t = 1; t < np; ++t) {
    prior = rates.col(t - 1);
    delta = rates.col(t) - rates.col(t - 1);
    const std::span<const double> ps(prior.data(), static_cast<std::size_t>(nr));
    const std::span<const double> ds(delta.data(), static_cast<std::size_t>(nr));
    for (Eigen::Index r = 0; r < nr; ++r) {
      const auto h = static_cast<std::size_t>(r);
      auto lag = engine.network(h, ps);
      if (lag) {
        out.network_lag(r, t) = *lag;
        out.network_delta(r, t) = *engine.network(h, ds);
      } else {
        out.network_missing(r, t) = true;
      }
      out.spatial_lag(r, t) = engine.spatial(h, ps).value;
      out.spatial_delta(r, t) = engine.spatial(h, ds).value;
      out.own_rate_lag(r, t) = prior[r];
    }
  }
  return out;
}

}  // namespace netspill
