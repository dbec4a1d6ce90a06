#include "netspill/serialize.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <ostream>

#include "netspill/csv.hpp"
#include "netspill/errors.hpp"

namespace netspill::io {

using csv::format_double;
using nlohmann::ordered_json;

ordered_json number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

ordered_json provenance_json(const Provenance& p) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : p) j[k] = v;
  return j;
}

void write_fit_csv(std::ostream& os, const FitResult& fit, const Provenance& p) {
  csv::write_preamble(os, p, {"term", "estimate", "se", "robust_se", "z", "p"});
  for (std::size_t j = 0; j < fit.terms.size(); ++j) {
    const auto i = static_cast<Eigen::Index>(j);
    csv::write_row(os, {fit.terms[j], format_double(fit.beta[i]), format_double(fit.se[i]),
                        format_double(fit.robust_se[i]), format_double(fit.z[i]),
                        format_double(fit.p[i])});
  }
  csv::write_row(os, {"ln_alpha", format_double(fit.ln_alpha), format_double(fit.ln_alpha_se),
                      format_double(fit.ln_alpha_robust_se), "NA", "NA"});
  for (const auto& vc : fit.variance_components) {
    csv::write_row(os, {"var(" + vc.level + ")", format_double(vc.variance),
                        format_double(vc.se), "NA", "NA", "NA"});
  }
}

ordered_json fit_json(const FitResult& fit, const Provenance& p) {
  ordered_json j;
  j["config"] = provenance_json(p);
  ordered_json terms = ordered_json::array();
  for (std::size_t k = 0; k < fit.terms.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    terms.push_back({{"term", fit.terms[k]},
                     {"estimate", number(fit.beta[i])},
                     {"se", number(fit.se[i])},
                     {"robust_se", number(fit.robust_se[i])},
                     {"z", number(fit.z[i])},
                     {"p", number(fit.p[i])}});
  }
  j["coefficients"] = terms;
  j["ln_alpha"] = number(fit.ln_alpha);
  j["ln_alpha_se"] = number(fit.ln_alpha_se);
  j["ln_alpha_robust_se"] = number(fit.ln_alpha_robust_se);
  j["alpha_at_boundary"] = fit.alpha_at_boundary;
  ordered_json vcs = ordered_json::array();
  for (const auto& vc : fit.variance_components) {
    vcs.push_back({{"level", vc.level},
                   {"variance", number(vc.variance)},
                   {"se", number(vc.se)},
                   {"at_boundary", vc.at_boundary},
                   {"identified", vc.identified}});
  }
  j["variance_components"] = vcs;
  j["loglik"] = number(fit.loglik);
  j["n_obs"] = fit.n_obs;
  j["cluster"] = std::string(to_string(fit.cluster));
  j["n_clusters"] = fit.n_clusters;
  j["convergence"] = {{"status", std::string(to_string(fit.convergence.status))},
                      {"iterations", fit.convergence.iterations},
                      {"gradient_norm", number(fit.convergence.gradient_norm)}};
  j["notes"] = fit.notes;
  return j;
}

ordered_json permutation_json(const PermutationReport& r, const Provenance& p) {
  ordered_json j;
  j["config"] = provenance_json(p);
  j["predictor"] = r.predictor;
  j["observed_maape"] = number(r.observed_maape);
  j["proportion_lower"] = number(r.proportion_lower);
  j["n_failed"] = r.n_failed;
  j["n_permutations"] = r.n_permutations;
  j["seed"] = r.seed;
  j["within_period"] = r.within_period;
  ordered_json m = ordered_json::array();
  for (double v : r.permuted_maapes) m.push_back(number(v));
  j["permuted_maapes"] = m;
  j["warnings"] = r.warnings;
  return j;
}

void write_causal_csv(std::ostream& os, const std::vector<CausalEstimate>& rows,
                      const Provenance& p) {
  csv::write_preamble(os, p, {"method", "treatment", "estimate", "se", "z", "p"});
  for (const auto& r : rows) {
    csv::write_row(os, {r.method, r.treatment, format_double(r.estimate), format_double(r.se),
                        format_double(r.z), format_double(r.p)});
  }
}

ordered_json weights_json(const WeightSet& w) {
  ordered_json j;
  j["method"] = std::string(to_string(w.method));
  j["treatment"] = w.treatment;
  j["type"] = std::string(to_string(w.type));
  j["ess"] = number(w.ess);
  j["n_truncated"] = w.n_truncated;
  j["truncation_cap"] = number(w.truncation_cap);
  ordered_json bal = ordered_json::array();
  for (const auto& b : w.balance) {
    bal.push_back({{"covariate", b.covariate},
                   {"unweighted", number(b.unweighted)},
                   {"weighted", number(b.weighted)}});
  }
  j["balance"] = bal;
  if (w.method == WeightMethod::super_learner) {
    ordered_json c = ordered_json::array();
    for (std::size_t k = 0; k < w.candidates.size(); ++k) {
      c.push_back({{"candidate", w.candidates[k]},
                   {"coefficient", number(w.stack_coefficients[k])},
                   {"cv_loss", number(w.candidate_cv_loss[k])}});
    }
    j["library"] = c;
    j["ensemble_cv_loss"] = number(w.ensemble_cv_loss);
  }
  if (w.method == WeightMethod::cbps) j["moment_norm"] = number(w.moment_norm);
  j["warnings"] = w.warnings;
  return j;
}

namespace {

constexpr std::array<std::string_view, 5> kLagNames{kNetworkLag, kNetworkDelta, kSpatialLag,
                                                    kSpatialDelta, kOwnRateLag};

}  // namespace

void write_lags_csv(std::ostream& os, const LagColumnSet& lags, const Provenance& p) {
  std::vector<std::string> header{"region", "period"};
  for (auto n : kLagNames) header.emplace_back(n);
  header.emplace_back("network_missing");
  header.emplace_back("isolated");
  csv::write_preamble(os, p, header);
  for (std::size_t r = 0; r < lags.regions.size(); ++r) {
    for (std::size_t t = 0; t < lags.period_labels.size(); ++t) {
      const auto ri = static_cast<Eigen::Index>(r);
      const auto ti = static_cast<Eigen::Index>(t);
      std::vector<std::string> row{lags.regions[r].code(), lags.period_labels[t]};
      for (auto n : kLagNames) row.push_back(format_double((*lags.column(n))(ri, ti)));
      row.emplace_back(lags.network_missing(ri, ti) ? "1" : "0");
      row.emplace_back(lags.isolated[r] ? "1" : "0");
      csv::write_row(os, row);
    }
  }
}

LagColumnSet read_lags_csv(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  const auto c_region = t.column("region");
  const auto c_period = t.column("period");
  std::vector<std::size_t> c_lag;
  for (auto n : kLagNames) c_lag.push_back(t.column(n));
  const auto c_missing = t.column("network_missing");
  const auto c_iso = t.column("isolated");

  LagColumnSet out;
  std::map<std::string, std::size_t> ridx, pidx;
  for (const auto& row : t.rows) {
    if (ridx.emplace(row[c_region], out.regions.size()).second) out.regions.emplace_back(row[c_region]);
    if (pidx.emplace(row[c_period], out.period_labels.size()).second) {
      out.period_labels.push_back(row[c_period]);
    }
  }
  const auto nr = static_cast<Eigen::Index>(out.regions.size());
  const auto np = static_cast<Eigen::Index>(out.period_labels.size());
  if (static_cast<std::size_t>(nr * np) != t.rows.size()) {
    throw ParseError(t.file, 0, "lag table is not a complete region x period grid");
  }
  out.mode = (np == 1 && out.period_labels[0] == "cumulative") ? Mode::cross_sectional : Mode::panel;
  std::array<Eigen::MatrixXd*, 5> mats{&out.network_lag, &out.network_delta, &out.spatial_lag,
                                       &out.spatial_delta, &out.own_rate_lag};
  for (auto* m : mats) m->setConstant(nr, np, NAN);
  out.network_missing.setConstant(nr, np, false);
  out.isolated.assign(static_cast<std::size_t>(nr), false);
  std::vector<bool> seen(static_cast<std::size_t>(nr * np), false);
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const auto& row = t.rows[k];
    const auto r = ridx.at(row[c_region]);
    const auto p = pidx.at(row[c_period]);
    const std::size_t cell = r * static_cast<std::size_t>(np) + p;
    if (seen[cell]) throw ParseError(t.file, t.line[k], "duplicate region/period cell");
    seen[cell] = true;
    const auto ri = static_cast<Eigen::Index>(r);
    const auto pi = static_cast<Eigen::Index>(p);
    for (std::size_t a = 0; a < mats.size(); ++a) {
      (*mats[a])(ri, pi) = csv::to_double_or_nan(row[c_lag[a]], t, k);
    }
    out.network_missing(ri, pi) = row[c_missing] == "1";
    out.isolated[r] = row[c_iso] == "1";
  }
  return out;
}

DescriptiveRow describe_column(std::string name, const double* v, std::size_t n) {
  DescriptiveRow r;
  r.variable = std::move(name);
  double s = 0.0;
  r.min = INFINITY;
  r.max = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(v[i])) continue;
    ++r.n;
    s += v[i];
    r.min = std::min(r.min, v[i]);
    r.max = std::max(r.max, v[i]);
  }
  if (r.n == 0) {
    r.mean = r.sd = r.min = r.max = NAN;
    return r;
  }
  r.mean = s / static_cast<double>(r.n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isnan(v[i])) ss += (v[i] - r.mean) * (v[i] - r.mean);
  }
  r.sd = r.n > 1 ? std::sqrt(ss / static_cast<double>(r.n - 1)) : NAN;
  return r;
}

std::vector<DescriptiveRow> descriptive_statistics(const Panel& panel) {
  std::vector<DescriptiveRow> out;
  const Eigen::MatrixXd& d = panel.deaths();
  const Eigen::MatrixXd& c = panel.cases();
  out.push_back(describe_column("deaths", d.data(), static_cast<std::size_t>(d.size())));
  out.push_back(describe_column("cases", c.data(), static_cast<std::size_t>(c.size())));
  out.push_back(describe_column("population", panel.population().data(), panel.n_regions()));
  for (const auto& [name, v] : panel.covariates()) {
    out.push_back(describe_column(name, v.data(), static_cast<std::size_t>(v.size())));
  }
  return out;
}

void write_descriptive_csv(std::ostream& os, const std::vector<DescriptiveRow>& rows,
                           const Provenance& p) {
  csv::write_preamble(os, p, {"variable", "n", "mean", "sd", "min", "max"});
  for (const auto& r : rows) {
    csv::write_row(os, {r.variable, std::to_string(r.n), format_double(r.mean),
                        format_double(r.sd), format_double(r.min), format_double(r.max)});
  }
}

}  // namespace netspill::io
