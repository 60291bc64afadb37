#include "apinn/evaluation.hpp"
#include "apinn/stats.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>

using namespace apinn;

namespace {

// Pairwise-count U statistic and full enumeration of group assignments.
double u_pairs(const std::vector<double> &a, const std::vector<double> &b) {
  double u = 0.0;
  for (double x : a)
    for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  return u;
}

double brute_force_p(const std::vector<double> &a, const std::vector<double> &b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::size_t n1 = a.size(), n = pooled.size();
  const double mu = static_cast<double>(n1 * b.size()) / 2.0;
  const double obs = std::abs(u_pairs(a, b) - mu);
  std::vector<bool> pick(n, false);
  std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(n1), true);
  std::size_t hits = 0, total = 0;
  // prev_permutation over a sorted-descending mask visits every n1-subset once.
  do {
    std::vector<double> ga, gb;
    for (std::size_t k = 0; k < n; ++k) (pick[k] ? ga : gb).push_back(pooled[k]);
    ++total;
    if (std::abs(u_pairs(ga, gb) - mu) >= obs - 1e-9) ++hits;
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

Dataset line_data(std::size_t n) {
  Dataset ds;
  ds.dim = 1;
  ds.feature_names = {"x"};
  ds.feature_units = {""};
  for (std::size_t i = 0; i < n; ++i) {
    ds.x.push_back(static_cast<double>(i));
    ds.y.push_back(10.0 + static_cast<double>(i % 7));
  }
  return ds;
}

ModelSpec constant_model(double c) {
  return {"const", [c](const Dataset &, std::uint64_t) {
            return FittedModel{[c](std::span<const double>) { return c; }, 3, "c"};
          }};
}

ModelSpec mean_model() {
  return {"mean", [](const Dataset &train, std::uint64_t) {
            const double m = mean(train.y);
            return FittedModel{[m](std::span<const double>) { return m; }, 1, ""};
          }};
}

} // namespace

TEST(Mape, ReferenceValues) {
  const std::vector<double> y = {1.0, 2.0}, a = {1.1, 1.94}, b = {0.92, 2.16};
  EXPECT_NEAR(mape(y, a).mape, 0.065, 1e-12);
  EXPECT_NEAR(mape(y, b).mape, 0.08, 1e-12);
  const std::vector<double> z = {1.0, 0.0};
  try {
    mape(z, a);
    FAIL();
  } catch (const DataError &e) {
    EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos);
  }
  EXPECT_THROW(mape(y, std::vector<double>{1.0}), DataError);
}

TEST(Mape, ScaleInvariant) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  std::vector<double> y(30), p(30);
  for (std::size_t i = 0; i < 30; ++i) {
    y[i] = u(rng);
    p[i] = u(rng);
  }
  const double base = mape(y, p).mape;
  for (double c : {0.001, 3.0, 1e4}) {
    std::vector<double> ys = y, ps = p;
    for (auto &v : ys) v *= c;
    for (auto &v : ps) v *= c;
    EXPECT_NEAR(mape(ys, ps).mape, base, 1e-12);
  }
}

TEST(MannWhitney, SmallExactCases) {
  const auto r = mann_whitney_u(std::vector<double>{1, 2}, std::vector<double>{3, 4});
  EXPECT_EQ(r.u, 0.0);
  EXPECT_NEAR(r.p_value, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(r.method, UTestMethod::Exact);
  const std::vector<double> s = {1.0, 2.0, 2.0, 5.0};
  const auto same = mann_whitney_u(s, s);
  EXPECT_EQ(same.u, 8.0);
  EXPECT_EQ(same.p_value, 1.0);
  EXPECT_THROW(mann_whitney_u(std::vector<double>{}, s), DataError);
}

TEST(MannWhitney, MatchesBruteForceEnumeration) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(1, 6), val(0, 9);
  for (int c = 0; c < 100; ++c) {
    std::vector<double> a(static_cast<std::size_t>(size(rng))), b(static_cast<std::size_t>(size(rng)));
    for (auto &v : a) v = val(rng); // small integer range forces ties
    for (auto &v : b) v = val(rng);
    const auto r = mann_whitney_u(a, b);
    EXPECT_DOUBLE_EQ(r.u, u_pairs(a, b));
    EXPECT_NEAR(r.p_value, brute_force_p(a, b), 1e-12) << "case " << c;
  }
}

TEST(MannWhitney, ApproximationCloseToExactAtEight) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int c = 0; c < 20; ++c) {
    std::vector<double> a(8), b(8);
    for (auto &v : a) v = n(rng);
    for (auto &v : b) v = n(rng) + 0.5;
    const auto exact = mann_whitney_u(a, b);
    const auto approx = mann_whitney_u(a, b, UTestMethod::NormalApprox);
    EXPECT_EQ(exact.method, UTestMethod::Exact);
    EXPECT_EQ(approx.method, UTestMethod::NormalApprox);
    EXPECT_EQ(exact.u, approx.u);
    EXPECT_NEAR(exact.p_value, approx.p_value, 0.02) << "case " << c;
  }
  const std::vector<double> nine(9, 1.0);
  EXPECT_EQ(mann_whitney_u(nine, nine).method, UTestMethod::NormalApprox);
}

TEST(Kde, IntegratesToOneAndIsSymmetric) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(2.0, 0.7);
  std::vector<double> s(200);
  for (auto &v : s) v = n(rng);
  const auto g = kde_grid(s, 512);
  const auto c = kde(s, g);
  EXPECT_NEAR(trapezoid(c.grid, c.density), 1.0, 0.02);
  const std::vector<double> sym = {-1.0, 1.0, -0.3, 0.3};
  const std::vector<double> grid = {-0.7, 0.7, -2.0, 2.0};
  const auto k = kde(sym, grid);
  EXPECT_NEAR(k.density[0], k.density[1], 1e-15);
  EXPECT_NEAR(k.density[2], k.density[3], 1e-15);
}

TEST(Kde, TwoPointsGiveTwoEqualModes) {
  const std::vector<double> s = {0.0, 10.0};
  const auto g = kde_grid(s, 1001);
  const auto c = kde(s, g);
  std::vector<double> modes;
  for (std::size_t i = 1; i + 1 < c.density.size(); ++i)
    if (c.density[i] > c.density[i - 1] && c.density[i] >= c.density[i + 1]) modes.push_back(c.grid[i]);
  ASSERT_EQ(modes.size(), 2u);
  EXPECT_NEAR(modes[0], 0.0, 0.05);
  EXPECT_NEAR(modes[1], 10.0, 0.05);
  const std::vector<double> at = {0.0, 10.0};
  const auto d = kde(s, at);
  EXPECT_NEAR(d.density[0], d.density[1], 1e-15);
}

TEST(Kde, BandwidthShrinksWithSampleSize) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> big(4000);
  for (auto &v : big) v = n(rng);
  const double h100 = silverman_bandwidth(std::span<const double>(big).first(100));
  const double h4000 = silverman_bandwidth(big);
  EXPECT_GT(h100, h4000);
  EXPECT_NEAR(h4000 / h100, std::pow(40.0, -0.2), 0.05);
  EXPECT_THROW(silverman_bandwidth(std::vector<double>{1.0, 1.0}), DataError);
}

TEST(Histogram, CountsSumToInput) {
  const std::vector<double> v = {0.05, 0.5, 0.55, 0.99, 1.0, -0.2, 1.4};
  const auto h = histogram(v, 10);
  EXPECT_EQ(h.total(), v.size());
  EXPECT_EQ(h.counts[0], 2u);
  EXPECT_EQ(h.counts[9], 3u);
  EXPECT_EQ(h.counts[5], 2u);
  EXPECT_EQ(histogram_csv(h).substr(0, 23), "bin_low,bin_high,count\n");
  EXPECT_THROW(histogram(v, 0), UsageError);
}

TEST(KFold, PartitionsIndices) {
  const auto folds = kfold_indices(23, 5, 7);
  ASSERT_EQ(folds.size(), 5u);
  std::set<std::size_t> seen;
  for (std::size_t f = 0; f < 5; ++f) {
    EXPECT_EQ(folds[f].size(), f < 3 ? 5u : 4u);
    for (auto i : folds[f]) EXPECT_TRUE(seen.insert(i).second);
  }
  EXPECT_EQ(seen.size(), 23u);
  EXPECT_EQ(kfold_indices(23, 5, 7), folds);
  EXPECT_THROW(kfold_indices(10, 1, 0), UsageError);
  EXPECT_THROW(kfold_indices(3, 5, 0), DataError);
}

TEST(KFold, ConstantModelOracle) {
  const Dataset ds = line_data(30);
  const auto r = kfold_cv(constant_model(12.0), ds, 5, 1);
  ASSERT_EQ(r.fold_mapes.size(), 5u);
  const auto folds = kfold_indices(30, 5, 1);
  for (std::size_t f = 0; f < 5; ++f) {
    double s = 0.0;
    for (auto i : folds[f]) s += std::abs(12.0 - ds.y[i]) / ds.y[i];
    EXPECT_NEAR(r.fold_mapes[f], s / static_cast<double>(folds[f].size()), 1e-12);
  }
  EXPECT_NEAR(r.mean_mape, mean(r.fold_mapes), 1e-15);
  EXPECT_NEAR(r.stddev_mape, sample_stddev(r.fold_mapes), 1e-15);
}

TEST(MonteCarlo, DeterministicModelHasZeroPredictionVariance) {
  const Dataset ds = line_data(40);
  const auto r = monte_carlo_cv(constant_model(11.0), ds, 10, 0.2, 3);
  EXPECT_EQ(r.max_var_pred, 0.0);
  EXPECT_EQ(r.failures, 0u);
  EXPECT_EQ(r.avg_epochs, 3.0);
  EXPECT_GT(r.max_var_mape, 0.0); // each trial scores a different holdout
  const auto m = monte_carlo_cv(mean_model(), ds, 10, 0.2, 3);
  EXPECT_GT(m.max_var_pred, 0.0);
  MonteCarloOptions same;
  same.same_seed_each_trial = true;
  const auto c = monte_carlo_cv(mean_model(), ds, 10, 0.2, 3, 1, same);
  EXPECT_EQ(c.max_var_pred, 0.0);
  EXPECT_LE(c.max_var_mape, 1e-30);
  EXPECT_THROW(monte_carlo_cv(mean_model(), ds, 1, 0.2, 3), UsageError);
}

TEST(MonteCarlo, CountsFailures) {
  const Dataset ds = line_data(40);
  int calls = 0;
  ModelSpec flaky{"flaky", [&](const Dataset &t, std::uint64_t s) {
                    if (++calls % 3 == 0) throw NumericalError("diverged");
                    return mean_model().fit(t, s);
                  }};
  const auto r = monte_carlo_cv(flaky, ds, 9, 0.2, 1);
  EXPECT_EQ(r.failures, 3u);
  EXPECT_EQ(r.trial_mapes.size(), 6u);
  ModelSpec broken{"broken", [](const Dataset &, std::uint64_t) -> FittedModel { throw NumericalError("x"); }};
  EXPECT_THROW(monte_carlo_cv(broken, ds, 4, 0.2, 1), NumericalError);
  const std::string csv = robustness_csv({r});
  EXPECT_EQ(csv[0], '#');
  EXPECT_NE(csv.find("\nmodel,max_var_pred,max_var_pred_raw,max_var_mape,avg_epochs,trials,failures\nflaky,"),
            std::string::npos);
}

TEST(Benchmark, RowsAndFailures) {
  const Dataset ds = line_data(30);
  ModelSpec broken{"broken", [](const Dataset &, std::uint64_t) -> FittedModel { throw NumericalError("boom"); }};
  const auto rows = benchmark_suite({constant_model(12.0), mean_model(), broken}, ds, {1, 2, 3}, 0.2);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].mapes.size(), 3u);
  EXPECT_DOUBLE_EQ(rows[0].median_mape, median(rows[0].mapes));
  EXPECT_FALSE(rows[1].failed);
  EXPECT_TRUE(rows[2].failed);
  EXPECT_EQ(rows[2].failures, 3u);
  const std::string csv = benchmark_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "model,median_mape,seeds,failures,status,summary");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(Benchmark, SixModelSuiteOnSodiumAnalog) {
  const Dataset raw = synthesize(default_synth_spec(SynthDomain::SodiumAnalog, 60, 0.02, 1));
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.max_epochs = 60;
  cfg.early_stop_patience = 60;
  const ArchSpec arch = ArchSpec::parse("4-[4]-1");
  SvrSearchOptions rs;
  rs.method = SearchMethod::Random;
  rs.budget = 4;
  SvrSearchOptions bo;
  bo.method = SearchMethod::Bayes;
  bo.budget = 4;
  bo.n_init = 2;
  TrainConfig pc = cfg;
  pc.mode = TrainMode::Pinn;
  PinnSpecOptions po;
  po.n_collocation = 8;
  const Mlp source = init_mlp(arch, 1);
  const std::vector<ModelSpec> specs = {tl_nn_spec("TL-NN", source, arch, {0}, cfg),
                                        nn_spec("NN", arch, cfg),
                                        pinn_spec("PINN", arch, pc, po),
                                        gp_spec("GP", {0.1, 1.0}, {1e-3}),
                                        svr_search_spec("SVR-RS", rs),
                                        svr_search_spec("SVR-Bayesian", bo)};
  const auto rows = benchmark_suite(specs, raw, {1}, 0.2);
  ASSERT_EQ(rows.size(), 6u);
  for (const auto &r : rows) {
    EXPECT_FALSE(r.failed) << r.model << ": " << r.error;
    EXPECT_TRUE(std::isfinite(r.median_mape)) << r.model;
  }
  EXPECT_EQ(rows[2].summary.rfind("alpha=", 0), 0u);
  EXPECT_NE(rows[4].summary.find("sv="), std::string::npos);
}

TEST(UTestJson, Fields) {
  const auto r = mann_whitney_u(std::vector<double>{1, 2}, std::vector<double>{3, 4});
  const auto j = utest_json(r, "water", "sodium");
  EXPECT_EQ(j.at("method"), "exact");
  EXPECT_NEAR(j.at("p_value").get<double>(), 1.0 / 3.0, 1e-15);
}
