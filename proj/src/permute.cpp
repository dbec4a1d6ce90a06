#include "netspill/permute.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <thread>

#include "netspill/errors.hpp"
#include "netspill/rng.hpp"

namespace netspill {

double maape(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size()) throw DataError("maape: length mismatch");
  if (y.empty()) throw DataError("maape: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] >= 0.0)) throw DataError("maape: observed values must be nonnegative");
    const double err = std::abs(y[i] - yhat[i]);
    if (y[i] == 0.0) {
      s += err == 0.0 ? 0.0 : std::numbers::pi / 2.0;
    } else {
      s += std::atan(err / y[i]);
    }
  }
  return s / static_cast<double>(y.size());
}

namespace {

double in_sample_maape(const DesignTable& d, const FitResult& fit) {
  return maape({d.y.data(), static_cast<std::size_t>(d.rows())},
               {fit.mu.data(), static_cast<std::size_t>(fit.mu.size())});
}

DesignTable drop_column(const DesignTable& d, Eigen::Index col) {
  DesignTable out = d;
  out.columns.erase(out.columns.begin() + col);
  const Eigen::Index p = d.cols();
  out.x.resize(d.rows(), p - 1);
  out.x.leftCols(col) = d.x.leftCols(col);
  out.x.rightCols(p - 1 - col) = d.x.rightCols(p - 1 - col);
  return out;
}

}  // namespace

PermutationReport permutation_test(const DesignTable& d, const ModelSpec& spec,
                                   const std::string& predictor,
                                   const PermutationOptions& opt) {
  if (std::find(spec.predictors.begin(), spec.predictors.end(), predictor) ==
          spec.predictors.end() &&
      !d.column_index(predictor)) {
    throw ConfigError("predictor '" + predictor + "' is not in the model");
  }
  const auto col = d.column_index(predictor);
  if (!col) throw MissingColumnError(predictor);
  if (opt.n_permutations < 1) throw ConfigError("n_permutations must be positive");

  PermutationReport rep;
  rep.predictor = predictor;
  rep.seed = opt.seed;
  rep.n_permutations = opt.n_permutations;
  rep.within_period = opt.within_period;
  const auto n_perm = static_cast<std::size_t>(opt.n_permutations);

  const Eigen::VectorXd column = d.x.col(*col);
  const bool constant = (column.array() == column[0]).all();
  if (constant) {
    // Shuffling a constant is the identity; the column is also aliased with
    // the intercept, so the baseline is fitted without it.
    rep.warnings.push_back("predictor '" + predictor +
                           "' is constant; permutation is the identity");
    const DesignTable reduced = drop_column(d, *col);
    const FitResult base = fit_model(reduced, spec.random_levels, opt.fit);
    if (!base.converged()) throw ConvergenceError("baseline fit did not converge");
    rep.observed_maape = in_sample_maape(reduced, base);
    rep.permuted_maapes.assign(n_perm, rep.observed_maape);
    rep.proportion_lower = 0.0;
    return rep;
  }

  const FitResult base = fit_model(d, spec.random_levels, opt.fit);
  if (!base.converged()) throw ConvergenceError("baseline fit did not converge");
  rep.observed_maape = in_sample_maape(d, base);

  // Row blocks within which values are exchanged.
  std::vector<std::vector<Eigen::Index>> blocks;
  if (opt.within_period) {
    std::map<int, std::vector<Eigen::Index>> by_period;
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      by_period[d.period.empty() ? -1 : d.period[static_cast<std::size_t>(i)]].push_back(i);
    }
    for (auto& [k, rows] : by_period) blocks.push_back(std::move(rows));
  } else {
    blocks.emplace_back(static_cast<std::size_t>(d.rows()));
    for (Eigen::Index i = 0; i < d.rows(); ++i) blocks[0][static_cast<std::size_t>(i)] = i;
  }

  rep.permuted_maapes.assign(n_perm, NAN);
  auto run_one = [&](std::size_t k) {
    auto eng = rng::engine(opt.seed, rng::kPermutationStreamBase + k);
    DesignTable pd = d;
    for (const auto& rows : blocks) {
      std::vector<double> vals(rows.size());
      for (std::size_t a = 0; a < rows.size(); ++a) vals[a] = column[rows[a]];
      rng::shuffle(vals.begin(), vals.end(), eng);
      for (std::size_t a = 0; a < rows.size(); ++a) pd.x(rows[a], *col) = vals[a];
    }
    try {
      const FitResult f = fit_model(pd, spec.random_levels, opt.fit);
      if (f.converged()) rep.permuted_maapes[k] = in_sample_maape(pd, f);
    } catch (const std::exception&) {
      // recorded as a failed refit
    }
  };

  unsigned threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(n_perm));
  if (threads <= 1) {
    for (std::size_t k = 0; k < n_perm; ++k) run_one(k);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t k = t; k < n_perm; k += threads) run_one(k);
      });
    }
    for (auto& th : pool) th.join();
  }

  std::size_t lower = 0;
  for (double m : rep.permuted_maapes) {
    if (std::isnan(m)) {
      ++rep.n_failed;
    } else if (m < rep.observed_maape) {
      ++lower;
    }
  }
  if (static_cast<double>(rep.n_failed) > opt.max_failure_fraction * static_cast<double>(n_perm)) {
    throw ConvergenceError(std::to_string(rep.n_failed) + " of " + std::to_string(n_perm) +
                           " permutation refits failed; the test is unreliable");
  }
  if (rep.n_failed > 0) {
    rep.warnings.push_back(std::to_string(rep.n_failed) + " permutation refits failed and were excluded");
  }
  rep.proportion_lower =
      static_cast<double>(lower) / static_cast<double>(n_perm - rep.n_failed);
  return rep;
}

}  // namespace netspill
