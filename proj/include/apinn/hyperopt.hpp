#pragma once
/**
 * @file hyperopt.hpp
 * @brief Hyperparameter search: random search, GP/expected-improvement
 * Bayesian optimization, and a genetic algorithm over network architectures.
 */

#include "apinn/common.hpp"
#include "apinn/data_io.hpp"
#include "apinn/kernels.hpp"
#include "apinn/mlp.hpp"
#include "apinn/stats.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace apinn {

enum class DimKind { LogReal, LinearReal, Integer, Categorical };

struct Dimension {
  std::string name;
  DimKind kind = DimKind::LinearReal;
  double low = 0.0;
  double high = 1.0;
  std::vector<std::string> choices; // Categorical only; the point stores the index

  static Dimension log_real(std::string n, double lo, double hi) { return {std::move(n), DimKind::LogReal, lo, hi, {}}; }
  static Dimension linear(std::string n, double lo, double hi) { return {std::move(n), DimKind::LinearReal, lo, hi, {}}; }
  static Dimension integer(std::string n, double lo, double hi) { return {std::move(n), DimKind::Integer, lo, hi, {}}; }
  static Dimension categorical(std::string n, std::vector<std::string> c) {
    return {std::move(n), DimKind::Categorical, 0.0, static_cast<double>(c.size() - 1), std::move(c)};
  }
};

using Point = std::vector<double>;

struct ParamSpace {
  std::vector<Dimension> dims;

  void validate() const {
    if (dims.empty()) throw UsageError("parameter space has no dimensions");
    for (const auto &d : dims) {
      if (d.kind == DimKind::Categorical) {
        if (d.choices.empty()) throw UsageError("categorical dimension '" + d.name + "' has no choices");
        continue;
      }
      if (!std::isfinite(d.low) || !std::isfinite(d.high) || !(d.low < d.high))
        throw UsageError("dimension '" + d.name + "' needs finite bounds with low < high");
      if (d.kind == DimKind::LogReal && !(d.low > 0)) throw UsageError("log dimension '" + d.name + "' needs low > 0");
    }
  }

  Point sample(std::mt19937_64 &rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Point p(dims.size());
    for (std::size_t k = 0; k < dims.size(); ++k) {
      const auto &d = dims[k];
      const double t = u(rng);
      switch (d.kind) {
      case DimKind::LogReal: p[k] = std::exp(std::log(d.low) + t * (std::log(d.high) - std::log(d.low))); break;
      case DimKind::LinearReal: p[k] = d.low + t * (d.high - d.low); break;
      case DimKind::Integer:
        p[k] = std::min(d.high, std::floor(d.low + t * (d.high - d.low + 1.0)));
        break;
      case DimKind::Categorical:
        p[k] = std::min(static_cast<double>(d.choices.size() - 1), std::floor(t * static_cast<double>(d.choices.size())));
        break;
      }
    }
    return p;
  }

  /// Min-max scaling into [0, 1]^D (log dimensions scaled in log space).
  Point to_unit(const Point &p) const {
    Point u(dims.size());
    for (std::size_t k = 0; k < dims.size(); ++k) {
      const auto &d = dims[k];
      switch (d.kind) {
      case DimKind::LogReal: u[k] = (std::log(p[k]) - std::log(d.low)) / (std::log(d.high) - std::log(d.low)); break;
      case DimKind::Categorical: u[k] = d.choices.size() > 1 ? p[k] / static_cast<double>(d.choices.size() - 1) : 0.0; break;
      default: u[k] = (p[k] - d.low) / (d.high - d.low); break;
      }
    }
    return u;
  }
};

struct Trial {
  Point point;
  double objective = std::numeric_limits<double>::infinity();
  std::size_t iter = 0;
  double wall_seconds = 0.0;
  bool failed = false;
  bool fallback = false; // Bayesian step fell back to a random point
};

struct SearchResult {
  Trial best;
  std::vector<Trial> history;
  std::vector<double> best_so_far;
};

using Objective = std::function<double(const Point &)>;

namespace detail {

inline Trial run_trial(const Objective &f, Point p, std::size_t iter) {
  Trial t;
  t.point = std::move(p);
  t.iter = iter;
  const auto start = std::chrono::steady_clock::now();
  try {
    t.objective = f(t.point);
  } catch (const std::exception &) {
    t.objective = std::numeric_limits<double>::infinity();
  }
  if (!std::isfinite(t.objective)) {
    t.failed = true;
    t.objective = std::numeric_limits<double>::infinity();
  }
  t.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return t;
}

inline void finish(SearchResult &r) {
  double best = std::numeric_limits<double>::infinity();
  bool any = false;
  for (const auto &t : r.history) {
    if (!t.failed && (!any || t.objective < best)) {
      best = t.objective;
      r.best = t;
      any = true;
    }
    r.best_so_far.push_back(best);
  }
  if (!any) throw NumericalError("hyperparameter search: every trial failed");
}

} // namespace detail

inline SearchResult random_search(const ParamSpace &space, const Objective &f, std::size_t budget, std::uint64_t seed) {
  space.validate();
  if (budget < 1) throw UsageError("random search budget must be >= 1");
  std::mt19937_64 rng(seed);
  SearchResult r;
  for (std::size_t it = 0; it < budget; ++it) r.history.push_back(detail::run_trial(f, space.sample(rng), it));
  detail::finish(r);
  return r;
}

/// EI for minimization; max(best - mean, 0) when the posterior is certain.
inline double expected_improvement(double mean, double stddev, double best) {
  const double gain = best - mean;
  if (!(stddev > 0)) return std::max(gain, 0.0);
  const double z = gain / stddev;
  return std::max(0.0, gain * normal_cdf(z) + stddev * normal_pdf(z));
}

struct BayesOptions {
  std::size_t n_candidates = 1024;
  double surrogate_noise = 1e-6;
};

/// n_init random points, then one EI-maximizing pick per iteration from
/// seeded random candidates (ties go to the lowest candidate index).
inline SearchResult bayes_opt(const ParamSpace &space, const Objective &f, std::size_t budget, std::size_t n_init,
                              std::uint64_t seed, const BayesOptions &opt = {}) {
  space.validate();
  if (n_init < 2 || budget <= n_init) throw UsageError("bayes_opt needs budget > n_init >= 2");
  std::mt19937_64 init_rng(derive_seed(seed, "init"));
  SearchResult r;
  for (std::size_t it = 0; it < n_init; ++it) r.history.push_back(detail::run_trial(f, space.sample(init_rng), it));
  const double gamma = 1.0 / static_cast<double>(space.dims.size());

  for (std::size_t it = n_init; it < budget; ++it) {
    std::mt19937_64 cand_rng(derive_seed(seed, "candidates", it));
    Dataset obs;
    obs.dim = space.dims.size();
    for (const auto &d : space.dims) {
      obs.feature_names.push_back(d.name);
      obs.feature_units.emplace_back();
    }
    double best = std::numeric_limits<double>::infinity();
    for (const auto &t : r.history) {
      if (t.failed) continue;
      const auto u = space.to_unit(t.point);
      obs.x.insert(obs.x.end(), u.begin(), u.end());
      obs.y.push_back(t.objective);
      best = std::min(best, t.objective);
    }
    Point pick;
    bool fallback = false;
    try {
      if (obs.rows() < 2) throw NumericalError("too few successful trials for a surrogate");
      const GpModel gp = gp_fit(obs, gamma, opt.surrogate_noise);
      double best_ei = -1.0;
      for (std::size_t c = 0; c < opt.n_candidates; ++c) {
        Point cand = space.sample(cand_rng);
        const auto pred = gp_predict(gp, space.to_unit(cand));
        const double ei = expected_improvement(pred.mean, std::sqrt(pred.variance), best);
        if (ei > best_ei) {
          best_ei = ei;
          pick = std::move(cand);
        }
      }
    } catch (const NumericalError &) {
      fallback = true;
      pick = space.sample(cand_rng);
    }
    Trial t = detail::run_trial(f, std::move(pick), it);
    t.fallback = fallback;
    r.history.push_back(std::move(t));
  }
  detail::finish(r);
  return r;
}

inline std::string history_csv(const ParamSpace &space, const SearchResult &r) {
  std::string out = "iter,objective";
  for (const auto &d : space.dims) out += "," + d.name;
  out += "\n";
  for (const auto &t : r.history) {
    out += std::to_string(t.iter) + "," + (t.failed ? std::string("inf") : detail::format_real(t.objective));
    for (double v : t.point) out += "," + detail::format_real(v);
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Genetic architecture search

inline constexpr std::size_t kMaxGenomeLayers = 4;

struct Genome {
  std::size_t layers = 1;
  std::array<std::size_t, kMaxGenomeLayers> widths{1, 1, 1, 1};
  double lr_exponent = -3.0; // learning rate = 10^lr_exponent

  std::vector<std::size_t> active_widths() const {
    return {widths.begin(), widths.begin() + static_cast<std::ptrdiff_t>(layers)};
  }
  double learning_rate() const { return std::pow(10.0, lr_exponent); }
  ArchSpec to_arch(std::size_t input_dim, Activation act = Activation::Tanh) const {
    ArchSpec a;
    a.input_dim = input_dim;
    a.hidden = active_widths();
    a.activation = act;
    a.validate();
    return a;
  }
  bool operator==(const Genome &) const = default;
};

struct GenomeSpace {
  std::size_t min_layers = 1;
  std::size_t max_layers = kMaxGenomeLayers;
  std::size_t min_width = 1;
  std::size_t max_width = 64;
  double lr_exp_low = -4.0;
  double lr_exp_high = -1.0;

  void validate() const {
    if (min_layers < 1 || max_layers > kMaxGenomeLayers || min_layers > max_layers)
      throw UsageError("genome layers must satisfy 1 <= min <= max <= 4");
    if (min_width < 1 || min_width > max_width) throw UsageError("genome widths must satisfy 1 <= min <= max");
    if (!(lr_exp_low <= lr_exp_high)) throw UsageError("genome learning-rate exponent range is empty");
  }

  Genome sample(std::mt19937_64 &rng) const {
    std::uniform_int_distribution<std::size_t> L(min_layers, max_layers), W(min_width, max_width);
    std::uniform_real_distribution<double> E(lr_exp_low, lr_exp_high);
    Genome g;
    g.layers = L(rng);
    for (auto &w : g.widths) w = W(rng);
    g.lr_exponent = E(rng);
    return g;
  }
};

struct GaOptions {
  std::size_t population = 20;
  std::size_t generations = 30;
  double mutation_prob = 0.2;
  std::size_t tournament = 2;
  std::size_t elitism = 1;
};

struct GaResult {
  Genome best;
  double best_fitness = std::numeric_limits<double>::infinity();
  std::vector<double> generation_best; // min fitness within each generation
  std::vector<double> best_so_far;
  std::vector<Genome> final_population;
  std::size_t evaluations = 0;
};

namespace detail {

inline Genome crossover(const Genome &a, const Genome &b, std::mt19937_64 &rng) {
  std::uniform_int_distribution<std::size_t> cut(1, kMaxGenomeLayers - 1);
  const std::size_t c = cut(rng);
  Genome child = a;
  for (std::size_t k = c; k < kMaxGenomeLayers; ++k) child.widths[k] = b.widths[k];
  child.layers = std::bernoulli_distribution(0.5)(rng) ? a.layers : b.layers;
  return child;
}

// Width genes creep by up to 3 or reset uniformly, with equal odds.
// Growing the layer count duplicates the last active width.
inline void mutate(Genome &g, const GenomeSpace &s, double p, std::mt19937_64 &rng) {
  std::bernoulli_distribution hit(p), coin(0.5);
  std::uniform_int_distribution<int> step(1, 3);
  std::uniform_int_distribution<std::size_t> W(s.min_width, s.max_width);
  std::normal_distribution<double> nudge(0.0, 0.25);
  if (hit(rng)) {
    const long l = static_cast<long>(g.layers) + (coin(rng) ? 1 : -1);
    const auto grown = static_cast<std::size_t>(std::clamp<long>(l, static_cast<long>(s.min_layers), static_cast<long>(s.max_layers)));
    if (grown > g.layers) g.widths[grown - 1] = g.widths[grown - 2]; // a new layer starts as a copy of the last one
    g.layers = grown;
  }
  for (auto &w : g.widths) {
    if (!hit(rng)) continue;
    if (coin(rng)) {
      const long d = step(rng) * (coin(rng) ? 1 : -1);
      w = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(w) + d, static_cast<long>(s.min_width),
                                                    static_cast<long>(s.max_width)));
    } else {
      w = W(rng);
    }
  }
  if (hit(rng)) g.lr_exponent = std::clamp(g.lr_exponent + nudge(rng), s.lr_exp_low, s.lr_exp_high);
}

} // namespace detail

/// Generational GA: size-2 tournaments, one-point crossover on the width
/// list, per-gene mutation, elitism. Every generation is evaluated in full
/// (population * generations objective calls); failures score +inf.
inline GaResult ga_search(const GenomeSpace &space, const std::function<double(const Genome &)> &f,
                          const GaOptions &opt, std::uint64_t seed, std::size_t jobs = 1) {
  space.validate();
  if (opt.population < 4) throw UsageError("GA population must be >= 4");
  if (opt.generations < 1) throw UsageError("GA needs at least one generation");
  if (opt.elitism >= opt.population) throw UsageError("GA elitism must be smaller than the population");
  std::mt19937_64 rng(seed);
  std::vector<Genome> pop(opt.population);
  for (auto &g : pop) g = space.sample(rng);
  GaResult r;
  {
    std::vector<double> fit(opt.population);
    for (std::size_t gen = 0; gen < opt.generations; ++gen) {
      parallel_for(pop.size(), jobs, [&](std::size_t i) {
        double v;
        try {
          v = f(pop[i]);
        } catch (const std::exception &) {
          v = std::numeric_limits<double>::infinity();
        }
        fit[i] = std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
      });
      r.evaluations += pop.size();
      std::vector<std::size_t> order(pop.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return fit[a] < fit[b]; });
      r.generation_best.push_back(fit[order[0]]);
      if (gen == 0 || fit[order[0]] < r.best_fitness) {
        r.best_fitness = fit[order[0]];
        r.best = pop[order[0]];
      }
      r.best_so_far.push_back(r.best_fitness);
      if (gen + 1 == opt.generations) break;

      std::vector<Genome> next;
      next.reserve(pop.size());
      for (std::size_t e = 0; e < opt.elitism; ++e) next.push_back(pop[order[e]]);
      std::uniform_int_distribution<std::size_t> pick(0, pop.size() - 1);
      const auto tournament = [&] {
        std::size_t best = pick(rng);
        for (std::size_t k = 1; k < opt.tournament; ++k) {
          const std::size_t c = pick(rng);
          if (fit[c] < fit[best]) best = c;
        }
        return best;
      };
      while (next.size() < pop.size()) {
        const std::size_t a = tournament(), b = tournament();
        Genome child = detail::crossover(pop[a], pop[b], rng);
        detail::mutate(child, space, opt.mutation_prob, rng);
        next.push_back(child);
      }
      pop = std::move(next);
    }
  }
  r.final_population = pop;
  return r;
}

} // namespace apinn
