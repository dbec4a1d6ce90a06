#include "netspill/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "netspill/csv.hpp"
#include "netspill/design.hpp"
#include "netspill/errors.hpp"
#include "netspill/permute.hpp"
#include "netspill/serialize.hpp"

namespace netspill {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(v);
  while (std::getline(is, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

double parse_number(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError("invalid number for " + key + ": '" + v + "'");
  }
  return out;
}

long long parse_integer(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError("invalid integer for " + key + ": '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + v + "'");
}

Date parse_date_option(const std::string& key, const std::string& v) {
  try {
    return parse_iso_date(v);
  } catch (const DataError&) {
    throw ConfigError("invalid date for " + key + ": '" + v + "'");
  }
}

// Removes every file it created unless committed.
class ArtifactSet {
 public:
  explicit ArtifactSet(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }
  ArtifactSet(const ArtifactSet&) = delete;
  ArtifactSet& operator=(const ArtifactSet&) = delete;
  ~ArtifactSet() {
    if (committed_) return;
    for (const auto& p : written_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }

  void write(const std::string& name, const std::string& content) {
    const fs::path p = dir_ / name;
    written_.push_back(p);
    std::ofstream os(p, std::ios::binary);
    if (!os) throw DataError("cannot write " + p.string());
    os << content;
    if (!os) throw DataError("failed writing " + p.string());
  }

  void adopt(const fs::path& p) { written_.push_back(p); }

  std::vector<fs::path> commit() {
    committed_ = true;
    return written_;
  }

 private:
  fs::path dir_;
  std::vector<fs::path> written_;
  bool committed_ = false;
};

template <typename F>
std::string render(F&& f) {
  std::ostringstream os;
  f(os);
  return os.str();
}

std::string json_text(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.model.outcome = Outcome::deaths;
  c.model.predictors = {std::string(kNetworkLag), std::string(kSpatialLag)};
  c.model.random_levels = {"group", "region"};
  c.model.mode = Mode::panel;
  return c;
}

void set_option(RunConfig& c, const std::string& key_in, const std::string& value_in) {
  const std::string key = trim(key_in);
  const std::string v = trim(value_in);
  auto positive_int = [&](const std::string& k) {
    const long long x = parse_integer(k, v);
    if (x < 1 || x > 1000000000) throw ConfigError(k + " must be a positive integer");
    return static_cast<int>(x);
  };
  if (key == "cases") {
    c.cases = v;
  } else if (key == "covariates") {
    c.covariates = v;
  } else if (key == "flows") {
    c.flows = v;
  } else if (key == "contiguity") {
    c.contiguity = v;
  } else if (key == "lags") {
    c.lags = v;
  } else if (key == "out") {
    c.out = v;
  } else if (key == "start") {
    c.start = parse_date_option(key, v);
  } else if (key == "period_days") {
    c.period_days = positive_int(key);
  } else if (key == "n_periods") {
    c.n_periods = v == "auto" ? 0 : positive_int(key);
  } else if (key == "unknown_regions") {
    if (v == "fail") {
      c.unknown_regions = UnknownRegionPolicy::fail;
    } else if (v == "drop") {
      c.unknown_regions = UnknownRegionPolicy::drop_warn;
    } else {
      throw ConfigError("unknown_regions must be fail or drop");
    }
  } else if (key == "outcome") {
    c.model.outcome = parse_outcome(v);
  } else if (key == "predictors") {
    c.model.predictors = split_list(v);
  } else if (key == "random_levels") {
    c.model.random_levels = v == "none" ? std::vector<std::string>{} : split_list(v);
  } else if (key == "mode") {
    c.model.mode = parse_mode(v);
  } else if (key == "offset") {
    c.model.log_population_offset = parse_bool(key, v);
  } else if (key == "network_filter") {
    c.network_filter = parse_network_filter(v);
  } else if (key == "include_self_flows") {
    c.include_self_flows = parse_bool(key, v);
  } else if (key == "permutations") {
    c.permutations = positive_int(key);
  } else if (key == "seed") {
    const long long s = parse_integer(key, v);
    if (s < 0) throw ConfigError("seed must be nonnegative");
    c.seed = static_cast<std::uint64_t>(s);
  } else if (key == "permute_predictor") {
    c.permute_predictor = v;
  } else if (key == "permute_within_period") {
    c.permute_within_period = parse_bool(key, v);
  } else if (key == "causal_methods") {
    c.causal_methods.clear();
    for (const auto& m : split_list(v)) c.causal_methods.push_back(parse_weight_method(m));
    if (c.causal_methods.empty()) throw ConfigError("causal_methods is empty");
  } else if (key == "causal_treatment") {
    c.causal_treatment = v;
  } else if (key == "causal_confounders") {
    c.causal_confounders = split_list(v);
  } else if (key == "causal_controls") {
    c.causal_controls = split_list(v);
  } else if (key == "sim.n_groups") {
    c.sim.n_groups = positive_int(key);
  } else if (key == "sim.regions_per_group") {
    c.sim.regions_per_group = positive_int(key);
  } else if (key == "sim.n_periods") {
    c.sim.n_periods = positive_int(key);
  } else if (key == "sim.start") {
    c.sim.start = parse_date_option(key, v);
  } else if (key == "sim.period_days") {
    c.sim.period_days = positive_int(key);
  } else if (key == "sim.far_links") {
    c.sim.far_links = parse_number(key, v);
  } else if (key == "sim.flow_log_mean") {
    c.sim.flow_log_mean = parse_number(key, v);
  } else if (key == "sim.flow_log_sd") {
    c.sim.flow_log_sd = parse_number(key, v);
  } else if (key == "sim.contiguous_log_boost") {
    c.sim.contiguous_log_boost = parse_number(key, v);
  } else if (key == "sim.self_flow_log_mean") {
    c.sim.self_flow_log_mean = parse_number(key, v);
  } else if (key == "sim.pop_log_mean") {
    c.sim.pop_log_mean = parse_number(key, v);
  } else if (key == "sim.pop_log_sd") {
    c.sim.pop_log_sd = parse_number(key, v);
  } else if (key == "sim.covariates") {
    c.sim.covariates = split_list(v);
  } else if (key == "sim.beta") {
    c.sim.beta.clear();
    for (const auto& item : split_list(v)) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ConfigError("sim.beta entries are name:value");
      c.sim.beta.emplace_back(trim(item.substr(0, colon)),
                              parse_number(key, trim(item.substr(colon + 1))));
    }
  } else if (key == "sim.baseline_rate") {
    c.sim.baseline_rate = parse_number(key, v);
  } else if (key == "sim.alpha") {
    c.sim.alpha = parse_number(key, v);
  } else if (key == "sim.sigma2_group") {
    c.sim.sigma2_group = parse_number(key, v);
  } else if (key == "sim.sigma2_region") {
    c.sim.sigma2_region = parse_number(key, v);
  } else if (key == "sim.death_fraction") {
    c.sim.death_fraction = parse_number(key, v);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void load_config_file(RunConfig& cfg, const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ParseError(path.string(), lineno, "expected key=value");
    }
    set_option(cfg, t.substr(0, eq), t.substr(eq + 1));
  }
}

std::vector<std::pair<std::string, std::string>> resolved(const RunConfig& c) {
  using csv::format_double;
  std::vector<std::string> methods;
  for (auto m : c.causal_methods) methods.emplace_back(to_string(m));
  std::vector<std::pair<std::string, std::string>> out{
      {"cases", c.cases.string()},
      {"covariates", c.covariates.string()},
      {"flows", c.flows.string()},
      {"contiguity", c.contiguity.string()},
      {"lags", c.lags.string()},
      {"start", c.start ? format_iso_date(*c.start) : "auto"},
      {"period_days", std::to_string(c.period_days)},
      {"n_periods", c.n_periods == 0 ? std::string("auto") : std::to_string(c.n_periods)},
      {"unknown_regions", c.unknown_regions == UnknownRegionPolicy::fail ? "fail" : "drop"},
      {"outcome", std::string(to_string(c.model.outcome))},
      {"predictors", join(c.model.predictors)},
      {"random_levels", c.model.random_levels.empty() ? "none" : join(c.model.random_levels)},
      {"mode", std::string(to_string(c.model.mode))},
      {"offset", c.model.log_population_offset ? "true" : "false"},
      {"network_filter", std::string(to_string(c.network_filter))},
      {"include_self_flows", c.include_self_flows ? "true" : "false"},
      {"permutations", std::to_string(c.permutations)},
      {"seed", std::to_string(c.seed)},
      {"permute_predictor", c.permute_predictor},
      {"permute_within_period", c.permute_within_period ? "true" : "false"},
      {"causal_methods", join(methods)},
      {"causal_treatment", c.causal_treatment},
      {"causal_confounders", join(c.causal_confounders)},
      {"causal_controls", join(c.causal_controls)},
  };
  return out;
}

LoadedInputs load_inputs(const RunConfig& cfg) {
  if (cfg.cases.empty() || cfg.covariates.empty()) {
    throw ConfigError("cases and covariates paths are required");
  }
  for (const auto* p : {&cfg.cases, &cfg.covariates}) {
    if (!fs::exists(*p)) throw ConfigError("input file does not exist: " + p->string());
  }
  const auto raw = parse_cases(cfg.cases);
  const auto covs = parse_covariates(cfg.covariates);
  if (raw.empty()) throw DataError("cases file " + cfg.cases.string() + " has no rows");
  PeriodScheme scheme;
  if (cfg.start) {
    scheme.start = *cfg.start;
  } else {
    Date first = raw.front().date;
    for (const auto& r : raw) first = std::min(first, r.date);
    scheme.start = first + std::chrono::days{1};
  }
  scheme.length_days = cfg.period_days;
  scheme.n_periods = cfg.n_periods;
  if (scheme.n_periods == 0) {
    // Every complete period covered by the data.
    Date last = raw.front().date;
    for (const auto& r : raw) last = std::max(last, r.date);
    scheme.n_periods = static_cast<int>((last - scheme.start).count() + 1) / cfg.period_days;
    if (scheme.n_periods < 1) throw DataError("cases file does not cover a complete period");
  }
  auto built = build_panel(raw, covs, scheme, cfg.unknown_regions);
  LoadedInputs out{std::move(built.panel), {}, {}, std::move(built.warnings)};
  std::set<RegionId> known(out.panel.regions().begin(), out.panel.regions().end());
  if (!cfg.flows.empty()) {
    if (!fs::exists(cfg.flows)) throw ConfigError("input file does not exist: " + cfg.flows.string());
    auto f = parse_flows(cfg.flows, &known, cfg.unknown_regions);
    out.flows = std::move(f.network);
    out.warnings.insert(out.warnings.end(), f.warnings.begin(), f.warnings.end());
  }
  if (!cfg.contiguity.empty()) {
    if (!fs::exists(cfg.contiguity)) {
      throw ConfigError("input file does not exist: " + cfg.contiguity.string());
    }
    auto g = parse_contiguity(cfg.contiguity, &known, cfg.unknown_regions);
    out.contiguity = std::move(g.graph);
    out.warnings.insert(out.warnings.end(), g.warnings.begin(), g.warnings.end());
  }
  return out;
}

LagColumnSet compute_exposures(const RunConfig& cfg, const Panel& panel, const FlowNetwork& flows,
                               const ContiguityGraph& contiguity) {
  ExposureOptions opts;
  opts.filter = cfg.network_filter;
  opts.include_self_flows = cfg.include_self_flows;
  return build_lag_columns(panel, flows, contiguity, opts, cfg.model.mode);
}

FitResult fit_stage(const RunConfig& cfg, const Panel& panel, const LagColumnSet& lags,
                    DesignTable* design_out) {
  DesignTable d = build_design(panel, &lags, cfg.model);
  FitResult fit = fit_model(d, cfg.model.random_levels, FitOptions{});
  if (design_out) *design_out = std::move(d);
  return fit;
}

std::string fit_csv_text(const RunConfig& cfg, const FitResult& fit) {
  return render([&](std::ostream& os) { io::write_fit_csv(os, fit, resolved(cfg)); });
}

std::vector<fs::path> run_simulate(const RunConfig& cfg) {
  SimConfig sc = cfg.sim;
  sc.seed = cfg.seed;
  const SimResult sim = generate(sc);
  ArtifactSet art(cfg.out);
  auto prov = describe(sc);
  for (const char* name : {"cases.csv", "covariates.csv", "flows.csv", "contiguity.csv", "truth.json"}) {
    art.adopt(cfg.out / name);
  }
  write_dataset(sim, sc, cfg.out, prov);
  return art.commit();
}

std::vector<fs::path> run_ingest(const RunConfig& cfg) {
  const LoadedInputs in = load_inputs(cfg);
  const auto prov = resolved(cfg);
  ArtifactSet art(cfg.out);
  const auto stats = io::descriptive_statistics(in.panel);
  art.write("descriptive.csv",
            render([&](std::ostream& os) { io::write_descriptive_csv(os, stats, prov); }));
  nlohmann::ordered_json j;
  j["config"] = io::provenance_json(prov);
  j["n_regions"] = in.panel.n_regions();
  j["n_periods"] = in.panel.n_periods();
  j["n_groups"] = in.panel.n_groups();
  std::vector<std::string> periods;
  for (const auto& p : in.panel.periods()) periods.push_back(p.label);
  j["periods"] = periods;
  j["n_flows"] = in.flows.size();
  j["n_contiguity_edges"] = in.contiguity.edge_count();
  j["warnings"] = in.warnings;
  art.write("ingest.json", json_text(j));
  return art.commit();
}

std::vector<fs::path> run_exposures(const RunConfig& cfg) {
  const LoadedInputs in = load_inputs(cfg);
  const LagColumnSet lags = compute_exposures(cfg, in.panel, in.flows, in.contiguity);
  ArtifactSet art(cfg.out);
  art.write("lags.csv",
            render([&](std::ostream& os) { io::write_lags_csv(os, lags, resolved(cfg)); }));
  return art.commit();
}

namespace {

LagColumnSet lags_for(const RunConfig& cfg, const LoadedInputs& in) {
  if (!cfg.lags.empty()) {
    if (!fs::exists(cfg.lags)) throw ConfigError("input file does not exist: " + cfg.lags.string());
    return io::read_lags_csv(cfg.lags);
  }
  return compute_exposures(cfg, in.panel, in.flows, in.contiguity);
}

}  // namespace

std::vector<fs::path> run_fit(const RunConfig& cfg) {
  const LoadedInputs in = load_inputs(cfg);
  const LagColumnSet lags = lags_for(cfg, in);
  const FitResult fit = fit_stage(cfg, in.panel, lags);
  const auto prov = resolved(cfg);
  ArtifactSet art(cfg.out);
  art.write("fit.csv", fit_csv_text(cfg, fit));
  art.write("fit.json", json_text(io::fit_json(fit, prov)));
  return art.commit();
}

std::vector<fs::path> run_permute(const RunConfig& cfg) {
  const LoadedInputs in = load_inputs(cfg);
  const LagColumnSet lags = lags_for(cfg, in);
  const DesignTable d = build_design(in.panel, &lags, cfg.model);
  std::string predictor = cfg.permute_predictor;
  if (predictor.empty()) {
    if (cfg.model.predictors.empty()) throw ConfigError("no predictor to permute");
    predictor = cfg.model.predictors.front();
  }
  PermutationOptions po;
  po.n_permutations = cfg.permutations;
  po.seed = cfg.seed;
  po.within_period = cfg.permute_within_period;
  const PermutationReport rep = permutation_test(d, cfg.model, predictor, po);
  ArtifactSet art(cfg.out);
  art.write("permutation.json", json_text(io::permutation_json(rep, resolved(cfg))));
  return art.commit();
}

namespace {

struct CausalData {
  Eigen::VectorXd y;
  Eigen::VectorXd t;
  Eigen::VectorXd offset;
  std::string treatment;
  Covariates confounders;
  Covariates controls;
};

const Eigen::VectorXd& need_covariate(const Panel& panel, const std::string& name) {
  const Eigen::VectorXd* v = panel.covariate(name);
  if (!v) throw MissingColumnError(name);
  if (!v->allFinite()) throw DataError("covariate " + name + " has missing values");
  return *v;
}

CausalData causal_data(const RunConfig& cfg, const LoadedInputs& in) {
  const Panel& panel = in.panel;
  const auto nr = static_cast<Eigen::Index>(panel.n_regions());
  if (cfg.causal_treatment.empty()) throw ConfigError("causal_treatment is required");
  CausalData cd;
  const Eigen::MatrixXd& counts =
      cfg.model.outcome == Outcome::deaths ? panel.deaths() : panel.cases();
  cd.y = counts.rowwise().sum();
  cd.offset = panel.population().array().log();

  // Treatment.
  std::string base = cfg.causal_treatment;
  const auto parts = [&] {
    std::vector<std::string> p;
    std::string cur;
    std::istringstream is(cfg.causal_treatment);
    while (std::getline(is, cur, ':')) p.push_back(cur);
    return p;
  }();
  auto raw_column = [&](const std::string& name) -> Eigen::VectorXd {
    if (panel.covariate(name)) return need_covariate(panel, name);
    RunConfig cs = cfg;
    cs.model.mode = Mode::cross_sectional;
    const LagColumnSet lags = compute_exposures(cs, panel, in.flows, in.contiguity);
    const Eigen::MatrixXd* m = lags.column(name);
    if (!m) throw MissingColumnError(name);
    Eigen::VectorXd v = m->col(0);
    if (!v.allFinite()) throw DataError("treatment " + name + " is unavailable for some regions");
    return v;
  };
  if (parts.size() == 2 && parts[0] == "above_average") {
    base = parts[1];
    const Eigen::VectorXd v = raw_column(base);
    const auto ind = above_average_indicator({v.data(), static_cast<std::size_t>(nr)});
    cd.t = Eigen::Map<const Eigen::VectorXd>(ind.data(), nr);
  } else if (parts.size() == 3 && parts[0] == "threshold") {
    base = parts[1];
    const Eigen::VectorXd v = raw_column(base);
    const auto ind = threshold_indicator({v.data(), static_cast<std::size_t>(nr)},
                                         parse_number("causal_treatment", parts[2]));
    cd.t = Eigen::Map<const Eigen::VectorXd>(ind.data(), nr);
  } else if (parts.size() == 1) {
    cd.t = raw_column(base);
  } else {
    throw ConfigError("causal_treatment must be <col>, above_average:<col> or threshold:<col>:<cutoff>");
  }
  cd.treatment = cfg.causal_treatment;

  auto gather = [&](const std::vector<std::string>& names) {
    Covariates c;
    c.names = names;
    c.x.resize(nr, static_cast<Eigen::Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j) {
      c.x.col(static_cast<Eigen::Index>(j)) = need_covariate(panel, names[j]);
    }
    return c;
  };
  std::vector<std::string> conf = cfg.causal_confounders;
  if (conf.empty()) {
    for (const auto& [name, v] : panel.covariates()) {
      if (name != base && v.allFinite()) conf.push_back(name);
    }
  }
  cd.confounders = gather(conf);
  cd.controls = gather(cfg.causal_controls);
  return cd;
}

}  // namespace

std::vector<fs::path> run_causal(const RunConfig& cfg) {
  const LoadedInputs in = load_inputs(cfg);
  const CausalData cd = causal_data(cfg, in);
  std::vector<CausalEstimate> rows;
  nlohmann::ordered_json diag = nlohmann::ordered_json::array();
  for (WeightMethod m : cfg.causal_methods) {
    const WeightSet ws = compute_weights(m, cd.t, cd.treatment, cd.confounders, cfg.seed);
    rows.push_back(weighted_effect(cd.y, cd.t, ws, cd.controls, cd.offset,
                                   OutcomeFamily::negative_binomial));
    diag.push_back(io::weights_json(ws));
  }
  const auto prov = resolved(cfg);
  ArtifactSet art(cfg.out);
  art.write("causal.csv", render([&](std::ostream& os) { io::write_causal_csv(os, rows, prov); }));
  nlohmann::ordered_json j;
  j["config"] = io::provenance_json(prov);
  j["weights"] = diag;
  art.write("causal.json", json_text(j));
  return art.commit();
}

std::vector<fs::path> run_report(const RunConfig& cfg) {
  std::ostringstream os;
  os << "# netspill report\n\n## Configuration\n\n";
  for (const auto& [k, v] : resolved(cfg)) os << "- " << k << " = " << v << "\n";
  auto slurp = [&](const char* name) -> std::optional<std::string> {
    std::ifstream is(cfg.out / name, std::ios::binary);
    if (!is) return std::nullopt;
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  auto strip_preamble = [](const std::string& text) {
    std::istringstream is(text);
    std::string line, out;
    while (std::getline(is, line)) {
      if (!line.empty() && line[0] == '#') continue;
      out += line + "\n";
    }
    return out;
  };
  bool any = false;
  if (auto t = slurp("descriptive.csv")) {
    os << "\n## Descriptive statistics\n\n```\n" << strip_preamble(*t) << "```\n";
    any = true;
  }
  if (auto t = slurp("fit.csv")) {
    os << "\n## Model fit\n\n```\n" << strip_preamble(*t) << "```\n";
    any = true;
  }
  if (auto t = slurp("permutation.json")) {
    const auto j = nlohmann::json::parse(*t);
    os << "\n## Permutation test\n\n- predictor: " << j.value("predictor", "")
       << "\n- observed MAAPE: " << j["observed_maape"].dump()
       << "\n- proportion lower: " << j["proportion_lower"].dump()
       << "\n- failed refits: " << j["n_failed"].dump() << "\n";
    any = true;
  }
  if (auto t = slurp("causal.csv")) {
    os << "\n## Causal estimates\n\n```\n" << strip_preamble(*t) << "```\n";
    any = true;
  }
  if (!any) throw DataError("no artifacts found in " + cfg.out.string() + " to report on");
  ArtifactSet art(cfg.out);
  art.write("report.md", os.str());
  return art.commit();
}

}  // namespace netspill
