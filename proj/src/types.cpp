#include "netspill/types.hpp"

#include <charconv>
#include <cstdio>

#include "netspill/errors.hpp"

namespace netspill {

namespace {

int parse_int(std::string_view s, std::string_view whole) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw DataError("invalid ISO date '" + std::string(whole) + "'");
  }
  return v;
}

}  // namespace

Date parse_iso_date(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    throw DataError("invalid ISO date '" + std::string(text) + "'");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{parse_int(text.substr(0, 4), text)},
                           month{static_cast<unsigned>(parse_int(text.substr(5, 2), text))},
                           day{static_cast<unsigned>(parse_int(text.substr(8, 2), text))}};
  if (!ymd.ok()) throw DataError("invalid ISO date '" + std::string(text) + "'");
  return sys_days{ymd};
}

std::string format_iso_date(Date d) {
  using namespace std::chrono;
  const year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

std::string period_label(Date first, Date last) {
  return format_iso_date(first) + "/" + format_iso_date(last);
}

RegionId::RegionId(std::string code) : code_(std::move(code)) {
  if (code_.empty()) throw DataError("empty region id");
}

FlowNetwork::FlowNetwork(std::vector<FlowEdge> edges) : edges_(std::move(edges)) {
  std::set<std::pair<RegionId, RegionId>> seen;
  for (const auto& e : edges_) {
    if (!(e.commuters >= 0.0)) {
      throw DataError("negative or NaN commuter count on flow " + e.origin.code() +
                      "->" + e.dest.code());
    }
    if (!seen.emplace(e.origin, e.dest).second) {
      throw DataError("duplicate flow " + e.origin.code() + "->" + e.dest.code());
    }
    out_total_[e.origin] += e.commuters;
  }
}

double FlowNetwork::out_total(const RegionId& origin) const {
  auto it = out_total_.find(origin);
  return it == out_total_.end() ? 0.0 : it->second;
}

ContiguityGraph::ContiguityGraph(Adjacency adjacency) : adj_(std::move(adjacency)) {
  for (const auto& [a, nbrs] : adj_) {
    for (const auto& b : nbrs) {
      if (a == b) throw DataError("self loop in contiguity graph at " + a.code());
      auto it = adj_.find(b);
      if (it == adj_.end() || !it->second.contains(a)) {
        throw DataError("asymmetric contiguity " + a.code() + "-" + b.code());
      }
    }
  }
}

ContiguityGraph::Symmetrized ContiguityGraph::from_pairs(
    const std::vector<std::pair<RegionId, RegionId>>& pairs) {
  std::set<std::pair<RegionId, RegionId>> directed;
  for (const auto& [a, b] : pairs) {
    if (a == b) throw DataError("self loop in contiguity input at " + a.code());
    directed.emplace(a, b);
  }
  Symmetrized out;
  Adjacency adj;
  for (const auto& [a, b] : directed) {
    if (!directed.contains({b, a})) ++out.asymmetric_pairs;
    adj[a].insert(b);
    adj[b].insert(a);
  }
  out.graph = ContiguityGraph(std::move(adj));
  return out;
}

const std::set<RegionId>& ContiguityGraph::neighbors(const RegionId& r) const {
  static const std::set<RegionId> kEmpty;
  auto it = adj_.find(r);
  return it == adj_.end() ? kEmpty : it->second;
}

bool ContiguityGraph::adjacent(const RegionId& a, const RegionId& b) const {
  return neighbors(a).contains(b);
}

std::size_t ContiguityGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& [a, nbrs] : adj_) n += nbrs.size();
  return n / 2;
}

Panel::Panel(PanelData data) : d_(std::move(data)) {
  const auto nr = static_cast<Eigen::Index>(d_.regions.size());
  const auto np = static_cast<Eigen::Index>(d_.periods.size());
  for (const auto* m : {&d_.deaths, &d_.cases, &d_.signed_cases}) {
    if (m->rows() != nr || m->cols() != np) {
      throw DataError("panel matrix dimensions do not match regions x periods");
    }
  }
  if (d_.population.size() != nr || d_.group.size() != d_.regions.size()) {
    throw DataError("population/group length does not match region count");
  }
  for (std::size_t i = 0; i < d_.regions.size(); ++i) {
    if (!index_.emplace(d_.regions[i].code(), i).second) {
      throw DataError("duplicate region " + d_.regions[i].code());
    }
    if (!(d_.population[static_cast<Eigen::Index>(i)] > 0.0)) {
      throw DataError("region " + d_.regions[i].code() + " has non-positive population");
    }
    const int g = d_.group[i];
    if (g < 0 || static_cast<std::size_t>(g) >= d_.group_names.size()) {
      throw DataError("region " + d_.regions[i].code() + " has no group assignment");
    }
  }
  for (std::size_t t = 0; t < d_.periods.size(); ++t) {
    if (d_.periods[t].last < d_.periods[t].first) {
      throw DataError("period " + d_.periods[t].label + " ends before it starts");
    }
    if (t > 0 && !(d_.periods[t - 1].last < d_.periods[t].first)) {
      throw DataError("periods overlap or are out of order at " + d_.periods[t].label);
    }
  }
  if ((d_.deaths.array() < 0.0).any() || (d_.cases.array() < 0.0).any()) {
    throw DataError("negative outcome counts in panel");
  }
  std::set<std::string> names;
  for (const auto& [name, col] : d_.covariates) {
    if (!names.insert(name).second) throw DataError("duplicate covariate " + name);
    if (col.size() != nr) throw DataError("covariate " + name + " has wrong length");
  }
}

const Eigen::VectorXd* Panel::covariate(std::string_view name) const {
  for (const auto& [n, col] : d_.covariates) {
    if (n == name) return &col;
  }
  return nullptr;
}

std::optional<std::size_t> Panel::index_of(const RegionId& r) const {
  auto it = index_.find(r.code());
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool Panel::operator==(const Panel& o) const {
  const auto& a = d_;
  const auto& b = o.d_;
  if (a.regions != b.regions || a.periods != b.periods || a.group_names != b.group_names ||
      a.group != b.group || a.covariates.size() != b.covariates.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.covariates.size(); ++i) {
    if (a.covariates[i].first != b.covariates[i].first ||
        a.covariates[i].second != b.covariates[i].second) {
      return false;
    }
  }
  return a.deaths == b.deaths && a.cases == b.cases && a.signed_cases == b.signed_cases &&
         a.population == b.population;
}

std::string_view to_string(Outcome o) { return o == Outcome::deaths ? "deaths" : "cases"; }

std::string_view to_string(Mode m) {
  return m == Mode::panel ? "panel" : "cross-sectional";
}

Outcome parse_outcome(std::string_view s) {
  if (s == "deaths") return Outcome::deaths;
  if (s == "cases") return Outcome::cases;
  throw ConfigError("unknown outcome '" + std::string(s) + "'");
}

Mode parse_mode(std::string_view s) {
  if (s == "panel") return Mode::panel;
  if (s == "cross-sectional" || s == "cross_sectional") return Mode::cross_sectional;
  throw ConfigError("unknown mode '" + std::string(s) + "'");
}

RankDeficiencyError::RankDeficiencyError(std::vector<std::string> columns)
    : Error([&] {
        std::string msg = "design is rank deficient; collinear columns:";
        for (const auto& c : columns) msg += " " + c;
        return msg;
      }()),
      columns_(std::move(columns)) {}

}  // namespace netspill
