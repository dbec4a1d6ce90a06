#include "netspill/design.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "netspill/errors.hpp"

namespace netspill {

std::optional<Eigen::Index> DesignTable::column_index(std::string_view name) const {
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j] == name) return static_cast<Eigen::Index>(j);
  }
  return std::nullopt;
}

bool DesignTable::operator==(const DesignTable& o) const {
  return outcome == o.outcome && columns == o.columns && x == o.x && y == o.y &&
         offset == o.offset && weights == o.weights && group == o.group &&
         region == o.region && period == o.period && n_groups == o.n_groups &&
         n_regions == o.n_regions && dropped_rows == o.dropped_rows;
}

namespace {

enum class Source { covariate, lag, period };

struct Term {
  std::string name;
  Source source;
  const Eigen::VectorXd* covariate = nullptr;
  const Eigen::MatrixXd* lag = nullptr;
};

}  // namespace

DesignTable build_design(const Panel& panel, const LagColumnSet* exposures,
                         const ModelSpec& spec) {
  for (const auto& level : spec.random_levels) {
    if (level != "group" && level != "region") {
      throw ConfigError("unknown random level '" + level + "'");
    }
  }
  if (!spec.random_levels.empty() && spec.random_levels.front() != "group") {
    throw ConfigError("random levels must start with the outermost level 'group'");
  }
  const bool cross = spec.mode == Mode::cross_sectional;
  if (exposures && exposures->mode != spec.mode) {
    throw ConfigError("lag columns were built for a different mode");
  }

  std::vector<Term> terms;
  std::set<std::string> seen;
  for (const auto& p : spec.predictors) {
    if (!seen.insert(p).second) throw ConfigError("predictor '" + p + "' listed twice");
    if (p == kPeriodToken) {
      if (cross) throw ConfigError("period dummies are unavailable in cross-sectional mode");
      terms.push_back({p, Source::period});
    } else if (const auto* cov = panel.covariate(p)) {
      terms.push_back({p, Source::covariate, cov});
    } else if (const auto* lag = exposures ? exposures->column(p) : nullptr) {
      terms.push_back({p, Source::lag, nullptr, lag});
    } else {
      throw MissingColumnError(p);
    }
  }

  const auto nr = static_cast<Eigen::Index>(panel.n_regions());
  const auto np = static_cast<Eigen::Index>(cross ? 1 : panel.n_periods());

  // Retained cells, region-major.
  std::vector<std::pair<Eigen::Index, Eigen::Index>> cells;
  std::size_t dropped = 0;
  for (Eigen::Index r = 0; r < nr; ++r) {
    for (Eigen::Index t = 0; t < np; ++t) {
      bool ok = true;
      for (const auto& term : terms) {
        if (term.source == Source::lag && std::isnan((*term.lag)(r, t))) ok = false;
      }
      if (ok) {
        cells.emplace_back(r, t);
      } else {
        ++dropped;
      }
    }
  }
  if (cells.empty()) throw DataError("design has no usable rows");

  // Covariate NaN check over the retained rows.
  std::string offenders;
  std::size_t n_bad = 0;
  for (const auto& term : terms) {
    if (term.source != Source::covariate) continue;
    std::set<Eigen::Index> bad_regions;
    for (const auto& [r, t] : cells) {
      if (std::isnan((*term.covariate)[r])) bad_regions.insert(r);
    }
    for (auto r : bad_regions) {
      if (n_bad++ < 20) {
        offenders += " " + panel.regions()[static_cast<std::size_t>(r)].code() + ":" + term.name;
      }
    }
  }
  if (n_bad) {
    throw DataError("missing values in design (" + std::to_string(n_bad) + "):" + offenders);
  }

  Eigen::Index ref_period = np;
  std::vector<bool> period_present(static_cast<std::size_t>(np), false);
  for (const auto& [r, t] : cells) {
    ref_period = std::min(ref_period, t);
    period_present[static_cast<std::size_t>(t)] = true;
  }

  DesignTable d;
  d.outcome = std::string(to_string(spec.outcome));
  d.columns.emplace_back(kIntercept);
  std::vector<Eigen::Index> dummy_periods;
  for (const auto& term : terms) {
    if (term.source == Source::period) {
      for (Eigen::Index t = ref_period + 1; t < np; ++t) {
        if (!period_present[static_cast<std::size_t>(t)]) continue;
        dummy_periods.push_back(t);
        d.columns.push_back("period:" + panel.periods()[static_cast<std::size_t>(t)].label);
      }
    } else {
      d.columns.push_back(term.name);
    }
  }

  const auto n = static_cast<Eigen::Index>(cells.size());
  d.x.resize(n, static_cast<Eigen::Index>(d.columns.size()));
  d.y.resize(n);
  d.offset.resize(n);
  d.weights = Eigen::VectorXd::Ones(n);
  const Eigen::MatrixXd& outcome =
      spec.outcome == Outcome::deaths ? panel.deaths() : panel.cases();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [r, t] = cells[static_cast<std::size_t>(i)];
    Eigen::Index j = 0;
    d.x(i, j++) = 1.0;
    for (const auto& term : terms) {
      switch (term.source) {
        case Source::period:
          for (auto p : dummy_periods) d.x(i, j++) = p == t ? 1.0 : 0.0;
          break;
        case Source::covariate:
          d.x(i, j++) = (*term.covariate)[r];
          break;
        case Source::lag:
          d.x(i, j++) = (*term.lag)(r, t);
          break;
      }
    }
    d.y[i] = cross ? outcome.row(r).sum() : outcome(r, t);
    d.offset[i] = spec.log_population_offset ? std::log(panel.population()[r]) : 0.0;
    d.group.push_back(panel.group()[static_cast<std::size_t>(r)]);
    d.region.push_back(static_cast<int>(r));
    d.period.push_back(cross ? -1 : static_cast<int>(t));
  }
  d.n_groups = panel.n_groups();
  d.n_regions = panel.n_regions();
  d.dropped_rows = dropped;
  return d;
}

}  // namespace netspill
