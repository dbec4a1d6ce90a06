#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "netspill/errors.hpp"
#include "netspill/pipeline.hpp"

namespace {

using netspill::RunConfig;

struct Flags {
  std::string config;
  std::optional<std::string> outcome, network_filter, mode, out, cases, covariates, flows,
      contiguity, lags, predictors, random_levels, treatment, permute_predictor;
  std::optional<long long> permutations, seed;
  bool within_period = false;
  std::vector<std::string> set;
};

void add_flags(CLI::App& app, Flags& f) {
  app.add_option("--config", f.config, "flat key=value config file");
  app.add_option("--outcome", f.outcome, "deaths|cases");
  app.add_option("--network-filter", f.network_filter, "all|contiguous|noncontiguous");
  app.add_option("--permutations", f.permutations, "number of permutations");
  app.add_option("--seed", f.seed, "top-level random seed");
  app.add_option("--mode", f.mode, "panel|cross-sectional");
  app.add_option("--out", f.out, "output directory");
  app.add_option("--cases", f.cases, "cumulative cases CSV");
  app.add_option("--covariates", f.covariates, "covariates CSV");
  app.add_option("--flows", f.flows, "commuting flows CSV");
  app.add_option("--contiguity", f.contiguity, "contiguity pairs CSV");
  app.add_option("--lags", f.lags, "precomputed lag columns CSV (fit, permute)");
  app.add_option("--predictors", f.predictors, "comma separated predictors");
  app.add_option("--random-levels", f.random_levels, "group | group,region | none");
  app.add_option("--treatment", f.treatment, "causal treatment spec");
  app.add_option("--permute-predictor", f.permute_predictor, "predictor to permute");
  app.add_flag("--permute-within-period", f.within_period,
               "shuffle only within periods instead of across all rows");
  app.add_option("--set", f.set, "extra key=value settings (repeatable)");
}

RunConfig resolve(const Flags& f) {
  RunConfig cfg = netspill::default_run_config();
  if (!f.config.empty()) netspill::load_config_file(cfg, f.config);
  auto set = [&](const char* key, const std::optional<std::string>& v) {
    if (v) netspill::set_option(cfg, key, *v);
  };
  for (const auto& kv : f.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw netspill::ConfigError("--set expects key=value");
    netspill::set_option(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  set("outcome", f.outcome);
  set("network_filter", f.network_filter);
  set("mode", f.mode);
  set("out", f.out);
  set("cases", f.cases);
  set("covariates", f.covariates);
  set("flows", f.flows);
  set("contiguity", f.contiguity);
  set("lags", f.lags);
  set("predictors", f.predictors);
  set("random_levels", f.random_levels);
  set("causal_treatment", f.treatment);
  set("permute_predictor", f.permute_predictor);
  if (f.permutations) netspill::set_option(cfg, "permutations", std::to_string(*f.permutations));
  if (f.seed) netspill::set_option(cfg, "seed", std::to_string(*f.seed));
  if (f.within_period) cfg.permute_within_period = true;
  return cfg;
}

int report_error(const std::string& command, const std::string& kind, const std::string& message,
                 const std::filesystem::path& out, const nlohmann::ordered_json& extra) {
  nlohmann::ordered_json j;
  j["status"] = "error";
  j["command"] = command;
  j["kind"] = kind;
  j["message"] = message;
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::cerr << j.dump() << '\n';
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (!ec) {
    std::ofstream os(out / "error.json", std::ios::binary);
    if (os) os << j.dump(2) << '\n';
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Network spillover panel models"};
  app.require_subcommand(1);
  Flags flags;
  using Runner = std::vector<std::filesystem::path> (*)(const RunConfig&);
  const std::vector<std::pair<std::string, Runner>> commands{
      {"simulate", netspill::run_simulate}, {"ingest", netspill::run_ingest},
      {"exposures", netspill::run_exposures}, {"fit", netspill::run_fit},
      {"permute", netspill::run_permute},   {"causal", netspill::run_causal},
      {"report", netspill::run_report}};
  std::vector<CLI::App*> subs;
  for (const auto& [name, fn] : commands) {
    auto* sub = app.add_subcommand(name, name + " stage");
    add_flags(*sub, flags);
    subs.push_back(sub);
  }
  CLI11_PARSE(app, argc, argv);

  std::string command;
  Runner runner = nullptr;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (subs[i]->parsed()) {
      command = commands[i].first;
      runner = commands[i].second;
    }
  }
  std::filesystem::path out = flags.out.value_or(".");
  try {
    const RunConfig cfg = resolve(flags);
    out = cfg.out;
    std::error_code ec;
    std::filesystem::remove(cfg.out / "error.json", ec);
    const auto written = runner(cfg);
    nlohmann::ordered_json j;
    j["status"] = "ok";
    j["command"] = command;
    std::vector<std::string> files;
    for (const auto& p : written) files.push_back(p.string());
    j["artifacts"] = files;
    std::cout << j.dump() << '\n';
    return 0;
  } catch (const netspill::ParseError& e) {
    return report_error(command, e.kind(), e.what(), out, {{"file", e.file()}, {"line", e.line()}});
  } catch (const netspill::Error& e) {
    return report_error(command, e.kind(), e.what(), out, nlohmann::ordered_json::object());
  } catch (const std::exception& e) {
    return report_error(command, "internal_error", e.what(), out, nlohmann::ordered_json::object());
  }
}
