#pragma once

#include <chrono>
#include <compare>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace netspill {

using Date = std::chrono::sys_days;

Date parse_iso_date(std::string_view text);
std::string format_iso_date(Date d);

// Opaque region key (FIPS-like). Never empty.
class RegionId {
 public:
  RegionId() = delete;
  explicit RegionId(std::string code);

  const std::string& code() const noexcept { return code_; }
  auto operator<=>(const RegionId&) const = default;
  bool operator==(const RegionId&) const = default;

 private:
  std::string code_;
};

struct RegionIdHash {
  std::size_t operator()(const RegionId& r) const noexcept {
    return std::hash<std::string>{}(r.code());
  }
};

struct FlowEdge {
  RegionId origin;
  RegionId dest;
  double commuters;

  bool operator==(const FlowEdge&) const = default;
};

// Directed origin -> destination commuter counts. Self-flows are stored;
// whether they count towards exposure is decided by the exposure options.
class FlowNetwork {
 public:
  FlowNetwork() = default;
  explicit FlowNetwork(std::vector<FlowEdge> edges);

  const std::vector<FlowEdge>& edges() const noexcept { return edges_; }
  // Sum over every edge leaving `origin`, self-flow included. 0 if unknown.
  double out_total(const RegionId& origin) const;
  const std::map<RegionId, double>& out_totals() const noexcept {
    return out_total_;
  }
  std::size_t size() const noexcept { return edges_.size(); }

  bool operator==(const FlowNetwork& o) const { return edges_ == o.edges_; }

 private:
  std::vector<FlowEdge> edges_;
  std::map<RegionId, double> out_total_;
};

// Symmetric neighbor sets, no self loops.
class ContiguityGraph {
 public:
  using Adjacency = std::map<RegionId, std::set<RegionId>>;

  ContiguityGraph() = default;
  // Validates symmetry and the absence of self loops.
  explicit ContiguityGraph(Adjacency adjacency);

  struct Symmetrized;
  // Builds a graph from possibly one-sided pairs; counts pairs whose reverse
  // was absent from the input.
  static Symmetrized from_pairs(
      const std::vector<std::pair<RegionId, RegionId>>& pairs);

  const std::set<RegionId>& neighbors(const RegionId& r) const;
  bool adjacent(const RegionId& a, const RegionId& b) const;
  const Adjacency& adjacency() const noexcept { return adj_; }
  std::size_t edge_count() const;  // undirected

  bool operator==(const ContiguityGraph&) const = default;

 private:
  Adjacency adj_;
};

struct ContiguityGraph::Symmetrized {
  ContiguityGraph graph;
  std::size_t asymmetric_pairs = 0;
};

struct Period {
  std::string label;
  Date first;  // inclusive
  Date last;   // inclusive

  bool operator==(const Period&) const = default;
};

std::string period_label(Date first, Date last);

// Region x period panel. Immutable after construction.
struct PanelData {
  std::vector<RegionId> regions;
  std::vector<Period> periods;
  Eigen::MatrixXd deaths;        // region x period, clamped >= 0
  Eigen::MatrixXd cases;         // region x period, clamped >= 0
  Eigen::MatrixXd signed_cases;  // region x period, unclamped differences
  Eigen::VectorXd population;    // per region, > 0
  std::vector<std::pair<std::string, Eigen::VectorXd>> covariates;
  std::vector<std::string> group_names;
  std::vector<int> group;  // per region, index into group_names
};

class Panel {
 public:
  explicit Panel(PanelData data);

  std::size_t n_regions() const noexcept { return d_.regions.size(); }
  std::size_t n_periods() const noexcept { return d_.periods.size(); }
  std::size_t n_groups() const noexcept { return d_.group_names.size(); }

  const std::vector<RegionId>& regions() const noexcept { return d_.regions; }
  const std::vector<Period>& periods() const noexcept { return d_.periods; }
  const Eigen::MatrixXd& deaths() const noexcept { return d_.deaths; }
  const Eigen::MatrixXd& cases() const noexcept { return d_.cases; }
  const Eigen::MatrixXd& signed_cases() const noexcept {
    return d_.signed_cases;
  }
  const Eigen::VectorXd& population() const noexcept { return d_.population; }
  const std::vector<std::pair<std::string, Eigen::VectorXd>>& covariates()
      const noexcept {
    return d_.covariates;
  }
  const Eigen::VectorXd* covariate(std::string_view name) const;
  const std::vector<std::string>& group_names() const noexcept {
    return d_.group_names;
  }
  const std::vector<int>& group() const noexcept { return d_.group; }

  std::optional<std::size_t> index_of(const RegionId& r) const;
  const PanelData& data() const noexcept { return d_; }

  bool operator==(const Panel& o) const;

 private:
  PanelData d_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class Outcome { deaths, cases };
enum class Mode { panel, cross_sectional };

std::string_view to_string(Outcome o);
std::string_view to_string(Mode m);
Outcome parse_outcome(std::string_view s);
Mode parse_mode(std::string_view s);

// Predictor names resolve against lag columns, covariates, or the token
// "period", which expands to one dummy per non-reference period.
struct ModelSpec {
  Outcome outcome = Outcome::deaths;
  std::vector<std::string> predictors;
  bool log_population_offset = true;
  std::vector<std::string> random_levels;  // subset prefix of {group, region}
  Mode mode = Mode::panel;
};

}  // namespace netspill
