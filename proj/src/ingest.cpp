#include "netspill/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

#include "netspill/csv.hpp"
#include "netspill/errors.hpp"

namespace netspill {

namespace {

void reject_missing(std::span<const double> column) {
  for (double v : column) {
    if (std::isnan(v)) throw DataError("indicator column has missing values");
  }
}

bool accept_region(const RegionId& r, const std::set<RegionId>* known,
                   UnknownRegionPolicy policy, const csv::Table& t, std::size_t row) {
  if (!known || known->contains(r)) return true;
  if (policy == UnknownRegionPolicy::fail) {
    throw ParseError(t.file, t.line[row], "unknown region '" + r.code() + "'");
  }
  return false;
}

}  // namespace

std::vector<Period> make_periods(const PeriodScheme& scheme) {
  if (scheme.length_days <= 0 || scheme.n_periods <= 0) {
    throw ConfigError("period length and count must be positive");
  }
  std::vector<Period> out;
  out.reserve(static_cast<std::size_t>(scheme.n_periods));
  for (int k = 0; k < scheme.n_periods; ++k) {
    const Date first = scheme.start + std::chrono::days{k * scheme.length_days};
    const Date last = first + std::chrono::days{scheme.length_days - 1};
    out.push_back({period_label(first, last), first, last});
  }
  return out;
}

std::vector<Date> boundary_dates(const PeriodScheme& scheme) {
  std::vector<Date> out;
  out.push_back(scheme.start - std::chrono::days{1});
  for (const auto& p : make_periods(scheme)) out.push_back(p.last);
  return out;
}

BuildPanelResult build_panel(const RawCumulativeSeries& raw, const CovariateTable& covariates,
                             const PeriodScheme& scheme, UnknownRegionPolicy policy) {
  const auto periods = make_periods(scheme);
  const auto boundaries = boundary_dates(scheme);
  const std::size_t nr = covariates.regions.size();
  const auto np = static_cast<Eigen::Index>(periods.size());

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < nr; ++i) index.emplace(covariates.regions[i].code(), i);
  std::map<Date, std::size_t> boundary_index;
  for (std::size_t k = 0; k < boundaries.size(); ++k) boundary_index.emplace(boundaries[k], k);

  const auto nb = static_cast<Eigen::Index>(boundaries.size());
  Eigen::MatrixXd cum_cases = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(nr), nb, NAN);
  Eigen::MatrixXd cum_deaths = cum_cases;

  std::size_t dropped = 0;
  std::size_t decreasing = 0;
  std::vector<std::optional<RawObservation>> last(nr);
  for (const auto& obs : raw) {
    auto it = index.find(obs.region.code());
    if (it == index.end()) {
      if (policy == UnknownRegionPolicy::fail) {
        throw DataError("case series references unknown region " + obs.region.code());
      }
      ++dropped;
      continue;
    }
    const std::size_t r = it->second;
    if (!(obs.cum_cases >= 0.0) || !(obs.cum_deaths >= 0.0)) {
      throw DataError("negative cumulative count for region " + obs.region.code() + " on " +
                      format_iso_date(obs.date));
    }
    if (auto& prev = last[r]) {
      if (!(prev->date < obs.date)) {
        throw DataError("dates not strictly increasing for region " + obs.region.code() +
                        " at " + format_iso_date(obs.date));
      }
      if (obs.cum_cases < prev->cum_cases || obs.cum_deaths < prev->cum_deaths) ++decreasing;
    }
    last[r] = obs;
    if (auto b = boundary_index.find(obs.date); b != boundary_index.end()) {
      const auto ri = static_cast<Eigen::Index>(r);
      const auto bi = static_cast<Eigen::Index>(b->second);
      cum_cases(ri, bi) = obs.cum_cases;
      cum_deaths(ri, bi) = obs.cum_deaths;
    }
  }

  for (std::size_t r = 0; r < nr; ++r) {
    for (Eigen::Index b = 0; b < nb; ++b) {
      if (std::isnan(cum_cases(static_cast<Eigen::Index>(r), b))) {
        throw MissingDateError("region " + covariates.regions[r].code() +
                               " has no cumulative counts for " +
                               format_iso_date(boundaries[static_cast<std::size_t>(b)]));
      }
    }
  }

  PanelData d;
  d.regions = covariates.regions;
  d.periods = periods;
  d.signed_cases = cum_cases.rightCols(np) - cum_cases.leftCols(np);
  const Eigen::MatrixXd signed_deaths = cum_deaths.rightCols(np) - cum_deaths.leftCols(np);
  const std::size_t clamps = static_cast<std::size_t>((d.signed_cases.array() < 0.0).count() +
                                                      (signed_deaths.array() < 0.0).count());
  d.cases = d.signed_cases.cwiseMax(0.0);
  d.deaths = signed_deaths.cwiseMax(0.0);
  d.population = covariates.population;
  d.covariates = covariates.columns;
  std::unordered_map<std::string, int> group_index;
  for (const auto& g : covariates.group) {
    auto [it, inserted] = group_index.emplace(g, static_cast<int>(d.group_names.size()));
    if (inserted) d.group_names.push_back(g);
    d.group.push_back(it->second);
  }

  BuildPanelResult out{Panel(std::move(d)), clamps, decreasing, dropped, {}};
  if (clamps) {
    out.warnings.push_back(std::to_string(clamps) +
                           " negative period differences clamped to 0 in outcome counts");
  }
  if (decreasing) {
    out.warnings.push_back(std::to_string(decreasing) + " decreasing cumulative rows");
  }
  if (dropped) {
    out.warnings.push_back(std::to_string(dropped) + " rows for unknown regions dropped");
  }
  return out;
}

RawCumulativeSeries parse_cases(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  const auto c_region = t.column("region");
  const auto c_date = t.column("date");
  const auto c_cases = t.column("cum_cases");
  const auto c_deaths = t.column("cum_deaths");
  RawCumulativeSeries out;
  out.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    try {
      out.push_back({RegionId(row[c_region]), parse_iso_date(row[c_date]),
                     csv::to_double(row[c_cases], t, i), csv::to_double(row[c_deaths], t, i)});
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(t.file, t.line[i], e.what());
    }
    if (out.back().cum_cases < 0 || out.back().cum_deaths < 0) {
      throw ParseError(t.file, t.line[i], "negative cumulative count");
    }
  }
  return out;
}

CovariateTable parse_covariates(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  const auto c_region = t.column("region");
  const auto c_group = t.column("group");
  const auto c_pop = t.column("population");
  CovariateTable out;
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  out.population.resize(n);
  std::vector<std::size_t> extra;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (j != c_region && j != c_group && j != c_pop) {
      extra.push_back(j);
      out.columns.emplace_back(t.header[j], Eigen::VectorXd(n));
    }
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    if (row[c_region].empty()) throw ParseError(t.file, t.line[i], "empty region id");
    if (!seen.insert(row[c_region]).second) {
      throw ParseError(t.file, t.line[i], "duplicate region '" + row[c_region] + "'");
    }
    if (row[c_group].empty()) throw ParseError(t.file, t.line[i], "empty group");
    const double pop = csv::to_double(row[c_pop], t, i);
    if (!(pop > 0.0)) throw ParseError(t.file, t.line[i], "population must be positive");
    out.regions.emplace_back(row[c_region]);
    out.group.push_back(row[c_group]);
    const auto ii = static_cast<Eigen::Index>(i);
    out.population[ii] = pop;
    for (std::size_t k = 0; k < extra.size(); ++k) {
      out.columns[k].second[ii] = csv::to_double_or_nan(row[extra[k]], t, i);
    }
  }
  return out;
}

FlowParseResult parse_flows(const std::filesystem::path& path, const std::set<RegionId>* known,
                            UnknownRegionPolicy policy) {
  const auto t = csv::read(path);
  const auto c_o = t.column("origin");
  const auto c_d = t.column("dest");
  const auto c_n = t.column("commuters");
  std::vector<FlowEdge> edges;
  edges.reserve(t.rows.size());
  FlowParseResult out;
  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    if (row[c_o].empty() || row[c_d].empty()) {
      throw ParseError(t.file, t.line[i], "empty region id");
    }
    const double n = csv::to_double(row[c_n], t, i);
    if (n < 0) throw ParseError(t.file, t.line[i], "negative commuter count");
    if (!seen.emplace(row[c_o], row[c_d]).second) {
      throw ParseError(t.file, t.line[i], "duplicate flow " + row[c_o] + "->" + row[c_d]);
    }
    RegionId o(row[c_o]);
    RegionId d(row[c_d]);
    if (!accept_region(o, known, policy, t, i) || !accept_region(d, known, policy, t, i)) {
      ++out.dropped;
      continue;
    }
    edges.push_back({std::move(o), std::move(d), n});
  }
  out.network = FlowNetwork(std::move(edges));
  if (out.dropped) {
    out.warnings.push_back(std::to_string(out.dropped) + " flows with unknown regions dropped");
  }
  return out;
}

ContiguityParseResult parse_contiguity(const std::filesystem::path& path,
                                       const std::set<RegionId>* known,
                                       UnknownRegionPolicy policy) {
  const auto t = csv::read(path);
  const auto c_a = t.column("region_a");
  const auto c_b = t.column("region_b");
  std::vector<std::pair<RegionId, RegionId>> pairs;
  ContiguityParseResult out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    if (row[c_a].empty() || row[c_b].empty()) {
      throw ParseError(t.file, t.line[i], "empty region id");
    }
    if (row[c_a] == row[c_b]) throw ParseError(t.file, t.line[i], "self-contiguity");
    RegionId a(row[c_a]);
    RegionId b(row[c_b]);
    if (!accept_region(a, known, policy, t, i) || !accept_region(b, known, policy, t, i)) {
      ++out.dropped;
      continue;
    }
    pairs.emplace_back(std::move(a), std::move(b));
  }
  auto sym = ContiguityGraph::from_pairs(pairs);
  out.graph = std::move(sym.graph);
  out.asymmetric_pairs = sym.asymmetric_pairs;
  if (out.asymmetric_pairs) {
    out.warnings.push_back(std::to_string(out.asymmetric_pairs) +
                           " one-sided contiguity pairs symmetrized");
  }
  if (out.dropped) {
    out.warnings.push_back(std::to_string(out.dropped) + " pairs with unknown regions dropped");
  }
  return out;
}

std::vector<double> above_average_indicator(std::span<const double> column) {
  reject_missing(column);
  if (column.empty()) return {};
  const double mean =
      std::accumulate(column.begin(), column.end(), 0.0) / static_cast<double>(column.size());
  std::vector<double> out;
  out.reserve(column.size());
  // A constant column must give all zeros even if the mean rounds below it.
  const bool constant = std::all_of(column.begin(), column.end(),
                                    [&](double v) { return v == column.front(); });
  for (double v : column) out.push_back(!constant && v > mean ? 1.0 : 0.0);
  return out;
}

std::vector<double> threshold_indicator(std::span<const double> column, double cutoff) {
  reject_missing(column);
  std::vector<double> out;
  out.reserve(column.size());
  for (double v : column) out.push_back(v >= cutoff ? 1.0 : 0.0);
  return out;
}

}  // namespace netspill
