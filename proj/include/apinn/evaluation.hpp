#pragma once
/**
 * @file evaluation.hpp
 * @brief Model specs for the six benchmark regressors, k-fold and Monte Carlo
 * cross-validation, the benchmark suite and the plot-ready report writers.
 */

#include "apinn/common.hpp"
#include "apinn/data_io.hpp"
#include "apinn/hyperopt.hpp"
#include "apinn/kernels.hpp"
#include "apinn/mlp.hpp"
#include "apinn/physics.hpp"
#include "apinn/stats.hpp"
#include "apinn/trainer.hpp"
#include "apinn/transfer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace apinn {

/// A trained regressor: raw feature row -> target.
struct FittedModel {
  std::function<double(std::span<const double>)> predict;
  std::size_t epochs = 0;
  std::string summary;
};

/// Fits a model on a raw (unnormalized) training set. Each spec normalizes
/// with statistics of the split it receives.
using FitFn = std::function<FittedModel(const Dataset &train, std::uint64_t seed)>;

struct ModelSpec {
  std::string name;
  FitFn fit;
};

namespace detail {

inline std::vector<double> norm_row(const NormStats &st, std::span<const double> x) {
  std::vector<double> z(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) z[j] = (x[j] - st.mean[j]) / st.stddev[j];
  return z;
}

inline FittedModel wrap_net(Mlp net, const NormStats &st, std::size_t epochs) {
  net.input_norm = st;
  auto shared = std::make_shared<const Mlp>(std::move(net));
  FittedModel f;
  f.predict = [shared](std::span<const double> x) { return forward(*shared, norm_row(*shared->input_norm, x)); };
  f.epochs = epochs;
  return f;
}

inline std::pair<double, double> column_range(const Dataset &ds, std::size_t col) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    lo = std::min(lo, ds.at(i, col));
    hi = std::max(hi, ds.at(i, col));
  }
  return {lo, hi};
}

} // namespace detail

inline ModelSpec nn_spec(std::string name, ArchSpec arch, TrainConfig cfg) {
  cfg.mode = TrainMode::DataOnly;
  return {std::move(name), [arch, cfg](const Dataset &train, std::uint64_t seed) {
            const auto [z, st] = normalize(train);
            TrainConfig c = cfg;
            c.seed = derive_seed(seed, "train");
            auto r = apinn::train(init_mlp(arch, derive_seed(seed, "init")), std::nullopt, z, nullptr, c);
            return detail::wrap_net(std::move(r.net), st, r.report.epochs_run);
          }};
}

/// Fine-tunes a copy of `source` with the listed layers transferred and frozen.
/// `source` must share the target's normalized input layout.
inline ModelSpec tl_nn_spec(std::string name, Mlp source, ArchSpec arch, std::set<std::size_t> layers,
                            TrainConfig cfg, bool soft_freeze = false) {
  cfg.mode = TrainMode::DataOnly;
  auto src = std::make_shared<const Mlp>(std::move(source));
  return {std::move(name), [src, arch, layers, cfg, soft_freeze](const Dataset &train, std::uint64_t seed) {
            const auto [z, st] = normalize(train);
            TransferPlan plan;
            plan.layers_to_copy = layers;
            const Mlp init = transfer_init(*src, arch, plan, derive_seed(seed, "init"));
            TrainConfig c = cfg;
            c.seed = derive_seed(seed, "train");
            auto r = train_frozen(init, std::nullopt, layers, false, z, nullptr, c, soft_freeze);
            return detail::wrap_net(std::move(r.net), st, r.report.epochs_run);
          }};
}

struct PinnSpecOptions {
  std::string pe_column = "pe";
  std::size_t n_collocation = 32;
  double boundary_weight = 1.0;
};

/// Adaptive PINN on the sodium analog, constrained by the sodium-profile problem
/// over the Peclet range of the training split.
inline ModelSpec pinn_spec(std::string name, ArchSpec arch, TrainConfig cfg, PinnSpecOptions opt = {}) {
  cfg.mode = TrainMode::Pinn;
  return {std::move(name), [arch, cfg, opt](const Dataset &train, std::uint64_t seed) {
            const std::size_t col = detail::column_index(train.feature_names, opt.pe_column);
            const auto [z, st] = normalize(train);
            const auto [lo, hi] = detail::column_range(train, col);
            const PdeProblem prob = sodium_profile_problem(st, col, lo, hi, opt.n_collocation,
                                                           derive_seed(seed, "collocation"), opt.boundary_weight);
            TrainConfig c = cfg;
            c.seed = derive_seed(seed, "train");
            auto r = apinn::train(init_mlp(arch, derive_seed(seed, "init")), BlendingNeuron{}, z, &prob, c);
            auto f = detail::wrap_net(std::move(r.net), st, r.report.epochs_run);
            f.summary = "alpha=" + detail::format_real(r.neuron.alpha);
            return f;
          }};
}

/// GP with (gamma, noise) picked by log marginal likelihood over the grid.
inline ModelSpec gp_spec(std::string name, std::vector<double> gammas, std::vector<double> noises) {
  if (gammas.empty() || noises.empty()) throw UsageError("gp spec needs at least one gamma and one noise level");
  return {std::move(name), [gammas, noises](const Dataset &train, std::uint64_t) {
            const auto [z, st] = normalize(train);
            std::optional<GpModel> best;
            for (double g : gammas)
              for (double s2 : noises) {
                try {
                  GpModel m = gp_fit(z, g, s2);
                  if (!best || m.log_marginal_likelihood > best->log_marginal_likelihood) best = std::move(m);
                } catch (const NumericalError &) {
                }
              }
            if (!best) throw NumericalError("gp: no grid point gave a stable fit");
            auto shared = std::make_shared<const GpModel>(std::move(*best));
            FittedModel f;
            f.predict = [shared, st](std::span<const double> x) { return gp_predict(*shared, detail::norm_row(st, x)).mean; };
            f.summary = "gamma=" + detail::format_real(shared->kernel.gamma) + " noise=" +
                        detail::format_real(shared->noise) + " lml=" + detail::format_real(shared->log_marginal_likelihood);
            return f;
          }};
}

enum class SearchMethod { Random, Bayes };

struct SvrSearchOptions {
  SearchMethod method = SearchMethod::Random;
  std::size_t budget = 30;
  std::size_t n_init = 5;
  double inner_fraction = 0.8;
  ParamSpace space{{Dimension::log_real("C", 1e-1, 1e3), Dimension::log_real("gamma", 1e-3, 10.0),
                    Dimension::log_real("epsilon", 1e-4, 0.5)}};
};

/// Targets mapped to zero mean, unit (population) variance.
inline Dataset standardize_targets(const Dataset &ds, double &shift, double &scale) {
  shift = mean(ds.y);
  const double sd = std::sqrt(variance(ds.y));
  scale = sd > 0 ? sd : 1.0;
  Dataset out = ds;
  for (auto &v : out.y) v = (v - shift) / scale;
  return out;
}

/// Standardizes targets before SMO. Selects (C, gamma, epsilon) by inner-split
/// validation MAPE and refits on the whole training split.
inline ModelSpec svr_search_spec(std::string name, SvrSearchOptions opt) {
  return {std::move(name), [opt](const Dataset &train, std::uint64_t seed) {
            const auto [z, st] = normalize(train);
            const auto [inner_train, inner_val] = split(z, opt.inner_fraction, derive_seed(seed, "inner-split"));
            double sh = 0, sc = 1;
            const Dataset ys = standardize_targets(inner_train, sh, sc);
            const Objective objective = [&](const Point &p) {
              const SvrModel m = svr_fit(ys, p[0], p[1], p[2]);
              std::vector<double> pred;
              for (std::size_t i = 0; i < inner_val.rows(); ++i) pred.push_back(sh + sc * svr_predict(m, inner_val.row(i)));
              return mape(inner_val.y, pred).mape;
            };
            const auto search = opt.method == SearchMethod::Random
                                    ? random_search(opt.space, objective, opt.budget, derive_seed(seed, "search"))
                                    : bayes_opt(opt.space, objective, opt.budget, opt.n_init, derive_seed(seed, "search"));
            const Point &p = search.best.point;
            double shift = 0, scale = 1;
            const Dataset full = standardize_targets(z, shift, scale);
            auto shared = std::make_shared<const SvrModel>(svr_fit(full, p[0], p[1], p[2]));
            FittedModel f;
            f.predict = [shared, st, shift, scale](std::span<const double> x) {
              return shift + scale * svr_predict(*shared, detail::norm_row(st, x));
            };
            f.summary = "C=" + detail::format_real(p[0]) + " gamma=" + detail::format_real(p[1]) +
                        " epsilon=" + detail::format_real(p[2]) + " sv=" + std::to_string(shared->support_vector_count());
            return f;
          }};
}

inline double holdout_mape(const FittedModel &m, const Dataset &holdout) {
  std::vector<double> pred;
  pred.reserve(holdout.rows());
  for (std::size_t i = 0; i < holdout.rows(); ++i) pred.push_back(m.predict(holdout.row(i)));
  return mape(holdout.y, pred).mape;
}

// ---------------------------------------------------------------------------
// k-fold

/// Shuffled contiguous folds; the first n % k folds hold one extra point.
inline std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw UsageError("k-fold needs k >= 2");
  if (k > n) throw DataError("k-fold with k=" + std::to_string(k) + " exceeds the " + std::to_string(n) + " rows");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t at = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(idx.begin() + static_cast<std::ptrdiff_t>(at), idx.begin() + static_cast<std::ptrdiff_t>(at + size));
    at += size;
  }
  return folds;
}

struct CvResult {
  double mean_mape = 0.0;
  double stddev_mape = 0.0; // sample stddev over folds
  std::vector<double> fold_mapes;
};

inline CvResult kfold_cv(const ModelSpec &spec, const Dataset &ds, std::size_t k, std::uint64_t seed,
                         std::size_t jobs = 1) {
  const auto folds = kfold_indices(ds.rows(), k, seed);
  CvResult r;
  r.fold_mapes.assign(k, 0.0);
  parallel_for(k, jobs, [&](std::size_t f) {
    std::vector<std::size_t> train_idx;
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
    std::sort(train_idx.begin(), train_idx.end());
    const FittedModel m = spec.fit(ds.subset(train_idx), derive_seed(seed, "fold", f));
    r.fold_mapes[f] = holdout_mape(m, ds.subset(folds[f]));
  });
  r.mean_mape = mean(r.fold_mapes);
  r.stddev_mape = sample_stddev(r.fold_mapes);
  return r;
}

// ---------------------------------------------------------------------------
// Monte Carlo robustness

struct MonteCarloOptions {
  bool same_seed_each_trial = false; // control run: every trial repeats trial 0
};

struct RobustnessReport {
  std::string model;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double max_var_pred = 0.0;     // normalized-target units (divided by var(y) of the dataset)
  double max_var_pred_raw = 0.0; // raw target units
  double max_var_mape = 0.0;
  double avg_epochs = 0.0;
  std::vector<double> trial_mapes; // successful trials only
};

/// Fixed probe points (a holdout_fraction share) are drawn once and never
/// trained on. Each trial splits the remaining rows at random, trains, scores
/// MAPE on its own holdout and predicts every probe point. "Max var(pred)" is
/// the largest across-trial prediction variance over the probe points.
inline RobustnessReport monte_carlo_cv(const ModelSpec &spec, const Dataset &ds, std::size_t trials,
                                       double holdout_fraction, std::uint64_t seed, std::size_t jobs = 1,
                                       const MonteCarloOptions &opt = {}) {
  if (trials < 2) throw UsageError("Monte Carlo validation needs trials >= 2");
  const auto probe_split = split_indices(ds.rows(), 1.0 - holdout_fraction, derive_seed(seed, "probe"));
  const Dataset pool = ds.subset(probe_split.first);
  const Dataset probe = ds.subset(probe_split.second);

  struct Slot {
    bool ok = false;
    double mape = 0.0;
    std::size_t epochs = 0;
    std::vector<double> pred;
  };
  std::vector<Slot> slots(trials);
  parallel_for(trials, jobs, [&](std::size_t t) {
    const std::uint64_t ts = derive_seed(seed, "trial", opt.same_seed_each_trial ? 0 : t);
    try {
      const auto [train, hold] = split(pool, 1.0 - holdout_fraction, derive_seed(ts, "split"));
      const FittedModel m = spec.fit(train, derive_seed(ts, "fit"));
      Slot s;
      s.mape = holdout_mape(m, hold);
      s.epochs = m.epochs;
      for (std::size_t i = 0; i < probe.rows(); ++i) s.pred.push_back(m.predict(probe.row(i)));
      s.ok = std::isfinite(s.mape) && std::all_of(s.pred.begin(), s.pred.end(), [](double v) { return std::isfinite(v); });
      slots[t] = std::move(s);
    } catch (const Error &) {
      slots[t].ok = false;
    }
  });

  RobustnessReport r;
  r.model = spec.name;
  r.trials = trials;
  std::vector<const Slot *> good;
  for (const auto &s : slots) {
    if (s.ok) good.push_back(&s);
    else ++r.failures;
  }
  if (good.size() < 2)
    throw NumericalError("Monte Carlo validation of '" + spec.name + "': fewer than 2 trials succeeded (" +
                         std::to_string(r.failures) + " failed)");
  double epochs = 0.0;
  for (const auto *s : good) {
    r.trial_mapes.push_back(s->mape);
    epochs += static_cast<double>(s->epochs);
  }
  r.avg_epochs = epochs / static_cast<double>(good.size());
  r.max_var_mape = variance(r.trial_mapes);
  const double var_y = variance(ds.y);
  for (std::size_t i = 0; i < probe.rows(); ++i) {
    std::vector<double> p;
    for (const auto *s : good) p.push_back(s->pred[i]);
    r.max_var_pred_raw = std::max(r.max_var_pred_raw, variance(p));
  }
  r.max_var_pred = var_y > 0 ? r.max_var_pred_raw / var_y : r.max_var_pred_raw;
  return r;
}

inline std::string robustness_csv(const std::vector<RobustnessReport> &rows) {
  std::string out =
      "# max_var_pred: largest across-trial variance of predictions at fixed probe points drawn once, "
      "in units of var(target); max_var_pred_raw: same in raw target units\n"
      "model,max_var_pred,max_var_pred_raw,max_var_mape,avg_epochs,trials,failures\n";
  for (const auto &r : rows)
    out += r.model + "," + detail::format_real(r.max_var_pred) + "," + detail::format_real(r.max_var_pred_raw) + "," +
           detail::format_real(r.max_var_mape) + "," + detail::format_real(r.avg_epochs) + "," +
           std::to_string(r.trials) + "," + std::to_string(r.failures) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark suite

struct BenchmarkRow {
  std::string model;
  double median_mape = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> mapes;
  std::size_t failures = 0;
  bool failed = false;
  std::string error;
  std::string summary; // fitted-model summary from the first successful seed
};

/// Each seed draws its own holdout split; a row fails only when every seed fails.
inline std::vector<BenchmarkRow> benchmark_suite(const std::vector<ModelSpec> &specs, const Dataset &ds,
                                                 const std::vector<std::uint64_t> &seeds, double holdout_fraction,
                                                 std::size_t jobs = 1) {
  if (seeds.empty()) throw UsageError("benchmark needs at least one seed");
  const std::size_t per = seeds.size();
  struct Slot {
    bool ok = false;
    double mape = 0.0;
    std::string summary;
    std::string error;
  };
  std::vector<Slot> slots(specs.size() * per);
  parallel_for(slots.size(), jobs, [&](std::size_t job) {
    const auto &spec = specs[job / per];
    const std::uint64_t seed = seeds[job % per];
    Slot s;
    try {
      const auto [train, hold] = split(ds, 1.0 - holdout_fraction, derive_seed(seed, "split"));
      const FittedModel m = spec.fit(train, derive_seed(seed, "fit"));
      s.mape = holdout_mape(m, hold);
      s.summary = m.summary;
      s.ok = std::isfinite(s.mape);
      if (!s.ok) s.error = "non-finite holdout MAPE";
    } catch (const std::exception &e) {
      s.error = e.what();
    }
    slots[job] = std::move(s);
  });
  std::vector<BenchmarkRow> rows;
  for (std::size_t m = 0; m < specs.size(); ++m) {
    BenchmarkRow row;
    row.model = specs[m].name;
    for (std::size_t s = 0; s < per; ++s) {
      const Slot &slot = slots[m * per + s];
      if (slot.ok) {
        row.mapes.push_back(slot.mape);
        if (row.summary.empty()) row.summary = slot.summary;
      } else {
        ++row.failures;
        if (row.error.empty()) row.error = slot.error;
      }
    }
    row.failed = row.mapes.empty();
    if (!row.failed) row.median_mape = median(row.mapes);
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace detail {
inline std::string csv_quote(const std::string &s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c == '\n' ? ' ' : c;
  }
  return q + "\"";
}
} // namespace detail

inline std::string benchmark_csv(const std::vector<BenchmarkRow> &rows) {
  std::string out = "model,median_mape,seeds,failures,status,summary\n";
  for (const auto &r : rows)
    out += r.model + "," + (r.failed ? std::string() : detail::format_real(r.median_mape)) + "," +
           std::to_string(r.mapes.size() + r.failures) + "," + std::to_string(r.failures) + "," +
           (r.failed ? "failed" : "ok") + "," + detail::csv_quote(r.failed ? r.error : r.summary) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Statistics reports

inline std::string kde_csv(const KdeCurve &c) {
  std::string out = "x,density\n";
  for (std::size_t i = 0; i < c.grid.size(); ++i)
    out += detail::format_real(c.grid[i]) + "," + detail::format_real(c.density[i]) + "\n";
  return out;
}

inline std::string histogram_csv(const Histogram &h) {
  std::string out = "bin_low,bin_high,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    out += detail::format_real(h.bin_left(i)) + "," +
           detail::format_real(i + 1 == h.counts.size() ? h.high : h.bin_left(i + 1)) + "," +
           std::to_string(h.counts[i]) + "\n";
  return out;
}

inline nlohmann::json utest_json(const UTestResult &r, const std::string &label_a, const std::string &label_b) {
  return {{"sample_a", label_a},
          {"sample_b", label_b},
          {"n_a", r.n_a},
          {"n_b", r.n_b},
          {"u", r.u},
          {"p_value", r.p_value},
          {"method", r.method == UTestMethod::Exact ? "exact" : "normal-approx"},
          {"two_sided", true}};
}

} // namespace apinn
