#include "netspill/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "json.hpp"
#include "netspill/csv.hpp"
#include "netspill/errors.hpp"
#include "netspill/exposure.hpp"
#include "netspill/rng.hpp"

namespace netspill {

namespace {

constexpr double kMaxMean = 1e9;  // largest count the fitters accept

std::string region_code(int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "R%05d", k);
  return buf;
}

std::string group_code(int g) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "G%03d", g);
  return buf;
}

bool is_lag_name(const std::string& name) {
  return name == kNetworkLag || name == kSpatialLag || name == kOwnRateLag ||
         name == kNetworkDelta || name == kSpatialDelta;
}

}  // namespace

double sample_nb(rng::Engine& eng, double mu, double alpha) {
  if (mu <= 0.0) return 0.0;
  double lambda = mu;
  if (alpha > 0.0) {
    std::gamma_distribution<double> gamma(1.0 / alpha, alpha * mu);
    lambda = gamma(eng);
  }
  if (lambda <= 0.0) return 0.0;
  std::poisson_distribution<long long> pois(lambda);
  return static_cast<double>(pois(eng));
}

void validate(const SimConfig& c) {
  if (c.n_groups < 1 || c.regions_per_group < 1 || c.n_periods < 1) {
    throw ConfigError("simulation sizes must be positive");
  }
  if (c.period_days < 1) throw ConfigError("period_days must be positive");
  if (!(c.alpha >= 0.0) || !(c.sigma2_group >= 0.0) || !(c.sigma2_region >= 0.0)) {
    throw ConfigError("alpha and variances must be nonnegative");
  }
  if (!(c.baseline_rate > 0.0)) throw ConfigError("baseline_rate must be positive");
  if (!(c.death_fraction > 0.0)) throw ConfigError("death_fraction must be positive");
  if (!(c.far_links >= 0.0) || !(c.flow_log_sd >= 0.0) || !(c.pop_log_sd >= 0.0)) {
    throw ConfigError("flow and population spreads must be nonnegative");
  }
  std::set<std::string> covs(c.covariates.begin(), c.covariates.end());
  if (covs.size() != c.covariates.size()) throw ConfigError("duplicate simulated covariate");
  for (const auto& [name, b] : c.beta) {
    if (!is_lag_name(name) && !covs.contains(name)) {
      throw ConfigError("coefficient for unknown simulated predictor '" + name + "'");
    }
    if (name == kNetworkDelta || name == kSpatialDelta) {
      if (b != 0.0) throw ConfigError("delta columns are not generative; their coefficient must be 0");
    }
    if (!std::isfinite(b)) throw ConfigError("non-finite coefficient for " + name);
  }
  // Static bound on the linear predictor before any sampling.
  double bound = c.pop_log_mean + 6.0 * c.pop_log_sd + std::log(c.baseline_rate) +
                 6.0 * std::sqrt(c.sigma2_group + c.sigma2_region);
  for (const auto& [name, b] : c.beta) {
    if (!is_lag_name(name)) bound += 6.0 * std::abs(b);
  }
  if (bound > std::log(kMaxMean)) {
    throw ConfigError("simulation config implies means above 1e9 (overflow risk)");
  }
}

std::vector<std::pair<std::string, std::string>> describe(const SimConfig& c) {
  using csv::format_double;
  std::vector<std::pair<std::string, std::string>> out{
      {"sim.n_groups", std::to_string(c.n_groups)},
      {"sim.regions_per_group", std::to_string(c.regions_per_group)},
      {"sim.n_periods", std::to_string(c.n_periods)},
      {"sim.start", format_iso_date(c.start)},
      {"sim.period_days", std::to_string(c.period_days)},
      {"sim.far_links", format_double(c.far_links)},
      {"sim.flow_log_mean", format_double(c.flow_log_mean)},
      {"sim.flow_log_sd", format_double(c.flow_log_sd)},
      {"sim.contiguous_log_boost", format_double(c.contiguous_log_boost)},
      {"sim.self_flow_log_mean", format_double(c.self_flow_log_mean)},
      {"sim.pop_log_mean", format_double(c.pop_log_mean)},
      {"sim.pop_log_sd", format_double(c.pop_log_sd)},
      {"sim.baseline_rate", format_double(c.baseline_rate)},
      {"sim.alpha", format_double(c.alpha)},
      {"sim.sigma2_group", format_double(c.sigma2_group)},
      {"sim.sigma2_region", format_double(c.sigma2_region)},
      {"sim.death_fraction", format_double(c.death_fraction)},
      {"seed", std::to_string(c.seed)},
  };
  std::string covs;
  for (const auto& n : c.covariates) covs += (covs.empty() ? "" : ",") + n;
  out.emplace_back("sim.covariates", covs);
  std::string beta;
  for (const auto& [n, b] : c.beta) beta += (beta.empty() ? "" : ",") + n + ":" + format_double(b);
  out.emplace_back("sim.beta", beta);
  return out;
}

SimResult generate(const SimConfig& c) {
  validate(c);
  auto eng = rng::engine(c.seed, rng::kSimulateStream);
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  const int n = c.n_groups * c.regions_per_group;
  const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));

  std::vector<RegionId> regions;
  for (int k = 0; k < n; ++k) regions.emplace_back(region_code(k));

  // Queen contiguity on the grid.
  ContiguityGraph::Adjacency adj;
  for (int k = 0; k < n; ++k) {
    const int r = k / side, col = k % side;
    auto& nb = adj[regions[static_cast<std::size_t>(k)]];
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        if (dr == 0 && dc == 0) continue;
        const int rr = r + dr, cc = col + dc;
        if (rr < 0 || cc < 0 || cc >= side) continue;
        const int j = rr * side + cc;
        if (j >= n) continue;
        nb.insert(regions[static_cast<std::size_t>(j)]);
      }
    }
  }
  ContiguityGraph contig(adj);

  Eigen::VectorXd pop(n);
  for (int k = 0; k < n; ++k) {
    pop[k] = std::max(100.0, std::round(std::exp(c.pop_log_mean + c.pop_log_sd * stdnorm(eng))));
  }
  std::vector<std::pair<std::string, Eigen::VectorXd>> covs;
  for (const auto& name : c.covariates) {
    Eigen::VectorXd v(n);
    for (int k = 0; k < n; ++k) v[k] = stdnorm(eng);
    covs.emplace_back(name, v);
  }

  // Flows.
  std::vector<FlowEdge> edges;
  std::poisson_distribution<int> far_count(c.far_links > 0.0 ? c.far_links : 1.0);
  auto commuters = [&](double log_mean) {
    return std::max(1.0, std::round(std::exp(log_mean + c.flow_log_sd * stdnorm(eng))));
  };
  for (int k = 0; k < n; ++k) {
    const RegionId& o = regions[static_cast<std::size_t>(k)];
    edges.push_back({o, o, commuters(c.self_flow_log_mean)});
    const auto& nbrs = contig.neighbors(o);
    for (const auto& d : nbrs) edges.push_back({o, d, commuters(c.flow_log_mean + c.contiguous_log_boost)});
    const int m = c.far_links > 0.0 ? far_count(eng) : 0;
    std::set<int> chosen;
    for (int a = 0; a < m && static_cast<int>(chosen.size() + nbrs.size()) + 1 < n; ++a) {
      int j;
      do {
        j = static_cast<int>(rng::uniform_index(eng, static_cast<std::size_t>(n)));
      } while (j == k || chosen.contains(j) || nbrs.contains(regions[static_cast<std::size_t>(j)]));
      chosen.insert(j);
    }
    for (int j : chosen) edges.push_back({o, regions[static_cast<std::size_t>(j)], commuters(c.flow_log_mean)});
  }
  FlowNetwork flows(std::move(edges));

  SimTruth truth;
  truth.intercept = std::log(c.baseline_rate);
  truth.beta = c.beta;
  truth.alpha = c.alpha;
  truth.sigma2_group = c.sigma2_group;
  truth.sigma2_region = c.sigma2_region;
  truth.group_effects.resize(c.n_groups);
  for (int g = 0; g < c.n_groups; ++g) truth.group_effects[g] = std::sqrt(c.sigma2_group) * stdnorm(eng);
  truth.region_effects.resize(n);
  for (int k = 0; k < n; ++k) truth.region_effects[k] = std::sqrt(c.sigma2_region) * stdnorm(eng);

  // Static part of the linear predictor.
  Eigen::VectorXd base(n);
  for (int k = 0; k < n; ++k) {
    double e = std::log(pop[k]) + truth.intercept + truth.group_effects[k / c.regions_per_group] +
               truth.region_effects[k];
    for (const auto& [name, b] : c.beta) {
      for (const auto& [cn, cv] : covs) {
        if (cn == name) e += b * cv[k];
      }
    }
    base[k] = e;
  }
  double b_net = 0.0, b_sp = 0.0, b_own = 0.0;
  for (const auto& [name, b] : c.beta) {
    if (name == kNetworkLag) b_net = b;
    if (name == kSpatialLag) b_sp = b;
    if (name == kOwnRateLag) b_own = b;
  }

  const ExposureEngine engine(regions, flows, contig);
  const int np = c.n_periods;
  Eigen::MatrixXd cases(n, np), deaths(n, np);
  Eigen::VectorXd prior_rate = Eigen::VectorXd::Zero(n);
  const std::span<const double> pr(prior_rate.data(), static_cast<std::size_t>(n));
  for (int t = 0; t < np; ++t) {
    for (int k = 0; k < n; ++k) {
      double e = base[k];
      if (t > 0) {
        const auto h = static_cast<std::size_t>(k);
        if (b_net != 0.0) e += b_net * engine.network(h, pr).value_or(0.0);
        if (b_sp != 0.0) e += b_sp * engine.spatial(h, pr).value;
        e += b_own * prior_rate[k];
      }
      const double mu = std::exp(e);
      if (!(mu <= kMaxMean)) {
        throw DataError("simulated means diverged (above 1e9) in period " + std::to_string(t) +
                        "; lag coefficients imply explosive feedback");
      }
      cases(k, t) = sample_nb(eng, mu, c.alpha);
      deaths(k, t) = sample_nb(eng, mu * c.death_fraction, c.alpha);
    }
    for (int k = 0; k < n; ++k) prior_rate[k] = case_rate(cases(k, t), pop[k]);
  }

  PeriodScheme scheme{c.start, c.period_days, np};
  PanelData pd;
  pd.regions = regions;
  pd.periods = make_periods(scheme);
  pd.cases = cases;
  pd.deaths = deaths;
  pd.signed_cases = cases;
  pd.population = pop;
  pd.covariates = covs;
  for (int g = 0; g < c.n_groups; ++g) pd.group_names.push_back(group_code(g));
  pd.group.resize(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) pd.group[static_cast<std::size_t>(k)] = k / c.regions_per_group;

  SimResult out{Panel(std::move(pd)), std::move(flows), std::move(contig), std::move(truth), {}, {},
                scheme};

  // Cumulative series at the boundary dates.
  const auto dates = boundary_dates(scheme);
  for (int k = 0; k < n; ++k) {
    double cc = 0.0, cd = 0.0;
    for (std::size_t b = 0; b < dates.size(); ++b) {
      if (b > 0) {
        cc += cases(k, static_cast<Eigen::Index>(b - 1));
        cd += deaths(k, static_cast<Eigen::Index>(b - 1));
      }
      out.raw.push_back({regions[static_cast<std::size_t>(k)], dates[b], cc, cd});
    }
  }
  out.covariates.regions = regions;
  for (int k = 0; k < n; ++k) out.covariates.group.push_back(group_code(k / c.regions_per_group));
  out.covariates.population = pop;
  out.covariates.columns = covs;
  return out;
}

void write_dataset(const SimResult& sim, const SimConfig& config, const std::filesystem::path& dir,
                   const std::vector<std::pair<std::string, std::string>>& provenance) {
  using csv::format_double;
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw DataError("cannot write " + (dir / name).string());
    return os;
  };
  {
    auto os = open("cases.csv");
    csv::write_preamble(os, provenance, {"region", "date", "cum_cases", "cum_deaths"});
    for (const auto& r : sim.raw) {
      csv::write_row(os, {r.region.code(), format_iso_date(r.date), format_double(r.cum_cases),
                          format_double(r.cum_deaths)});
    }
  }
  {
    auto os = open("covariates.csv");
    std::vector<std::string> header{"region", "group", "population"};
    for (const auto& [name, v] : sim.covariates.columns) header.push_back(name);
    csv::write_preamble(os, provenance, header);
    for (std::size_t k = 0; k < sim.covariates.regions.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      std::vector<std::string> row{sim.covariates.regions[k].code(), sim.covariates.group[k],
                                   format_double(sim.covariates.population[i])};
      for (const auto& [name, v] : sim.covariates.columns) row.push_back(format_double(v[i]));
      csv::write_row(os, row);
    }
  }
  {
    auto os = open("flows.csv");
    csv::write_preamble(os, provenance, {"origin", "dest", "commuters"});
    for (const auto& e : sim.flows.edges()) {
      csv::write_row(os, {e.origin.code(), e.dest.code(), format_double(e.commuters)});
    }
  }
  {
    auto os = open("contiguity.csv");
    csv::write_preamble(os, provenance, {"region_a", "region_b"});
    for (const auto& [a, nbrs] : sim.contiguity.adjacency()) {
      for (const auto& b : nbrs) {
        if (a < b) csv::write_row(os, {a.code(), b.code()});
      }
    }
  }
  {
    nlohmann::ordered_json j;
    nlohmann::ordered_json cfg;
    for (const auto& [k, v] : provenance) cfg[k] = v;
    j["config"] = cfg;
    j["seed"] = config.seed;
    j["intercept"] = sim.truth.intercept;
    nlohmann::ordered_json beta;
    for (const auto& [name, b] : sim.truth.beta) beta[name] = b;
    j["beta"] = beta;
    j["ln_alpha"] = sim.truth.alpha > 0.0 ? std::log(sim.truth.alpha) : -INFINITY;
    j["alpha"] = sim.truth.alpha;
    j["sigma2_group"] = sim.truth.sigma2_group;
    j["sigma2_region"] = sim.truth.sigma2_region;
    j["group_effects"] = std::vector<double>(sim.truth.group_effects.data(),
                                             sim.truth.group_effects.data() + sim.truth.group_effects.size());
    j["region_effects"] = std::vector<double>(sim.truth.region_effects.data(),
                                              sim.truth.region_effects.data() + sim.truth.region_effects.size());
    auto os = open("truth.json");
    os << j.dump(2) << '\n';
  }
}

}  // namespace netspill
