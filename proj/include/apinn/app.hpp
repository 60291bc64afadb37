#pragma once
/**
 * @file app.hpp
 * @brief Command-line front end: option tables, config-file merging and the
 * seven commands (gen-data, train, transfer, hyperopt, benchmark,
 * mc-validate, stats).
 */

#include "apinn/common.hpp"
#include "apinn/data_io.hpp"
#include "apinn/evaluation.hpp"
#include "apinn/hyperopt.hpp"
#include "apinn/kernels.hpp"
#include "apinn/mlp.hpp"
#include "apinn/physics.hpp"
#include "apinn/stats.hpp"
#include "apinn/trainer.hpp"
#include "apinn/transfer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace apinn::app {

using nlohmann::json;
namespace fs = std::filesystem;

enum class OptKind { Str, Int, Real, Flag };

struct OptionDef {
  std::string name; // without the leading "--"
  OptKind kind = OptKind::Str;
  json fallback;    // null: no default (optional or derived at run time)
  std::string help;
};

struct CommandDef {
  std::string name;
  std::string help;
  std::vector<OptionDef> options;
  std::function<void(const json &opts, std::ostream &log)> run;
};

inline constexpr std::uint64_t kDefaultSeed = 42;

// ---------------------------------------------------------------------------
// Option access

inline const json &opt(const json &o, const std::string &key) {
  const auto it = o.find(key);
  if (it == o.end()) throw UsageError("internal: option '" + key + "' not resolved");
  return *it;
}
inline std::string str(const json &o, const std::string &k) { return opt(o, k).is_null() ? "" : opt(o, k).get<std::string>(); }
inline long long integer(const json &o, const std::string &k) { return opt(o, k).get<long long>(); }
inline double real(const json &o, const std::string &k) { return opt(o, k).get<double>(); }
inline bool flag(const json &o, const std::string &k) { return opt(o, k).get<bool>(); }
inline bool has(const json &o, const std::string &k) { return !opt(o, k).is_null(); }

inline std::size_t count(const json &o, const std::string &k, long long min = 1) {
  const long long v = integer(o, k);
  if (v < min) throw UsageError("--" + k + " must be >= " + std::to_string(min) + " (got " + std::to_string(v) + ")");
  return static_cast<std::size_t>(v);
}

inline std::uint64_t root_seed(const json &o) { return opt(o, "seed").get<std::uint64_t>(); }

inline fs::path out_path(const json &o, const std::string &file) { return fs::path(str(o, "out")) / file; }

inline void emit(const json &o, const std::string &file, const std::string &contents, std::ostream &log) {
  const auto p = out_path(o, file);
  write_file_atomic(p, contents);
  log << "wrote " << p.string() << "\n";
}

inline std::string dump(const json &j) { return j.dump(2) + "\n"; }

inline std::vector<std::string> split_list(const std::string &s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    cell = detail::trim(cell);
    if (!cell.empty()) out.push_back(cell);
  }
  return out;
}

inline std::set<std::size_t> parse_layers(const std::string &s) {
  std::set<std::size_t> out;
  for (const auto &cell : split_list(s)) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(cell, &used);
      if (used != cell.size()) throw std::invalid_argument(cell);
      out.insert(v);
    } catch (const std::logic_error &) {
      throw UsageError("malformed layer list '" + s + "' (expected e.g. 0,1)");
    }
  }
  if (out.empty()) throw UsageError("layer list is empty");
  return out;
}

inline std::vector<std::uint64_t> seed_list(std::uint64_t root, std::size_t n) {
  std::vector<std::uint64_t> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(derive_seed(root, "replicate", i));
  return v;
}

// ---------------------------------------------------------------------------
// Shared option groups

inline std::vector<OptionDef> data_options() {
  return {{"data", OptKind::Str, nullptr, "target-domain CSV (default: synthesize the sodium analog)"},
          {"source-data", OptKind::Str, nullptr, "source-domain CSV (default: synthesize the water analog)"},
          {"target", OptKind::Str, "nu", "target column name"},
          {"noise", OptKind::Real, 0.02, "multiplicative noise stddev for synthesized data"},
          {"n-water", OptKind::Int, 400, "rows of the synthesized water analog"},
          {"n-sodium", OptKind::Int, 87, "rows of the synthesized sodium analog"}};
}

inline std::vector<OptionDef> train_options(double lr, long long epochs, long long patience) {
  return {{"arch", OptKind::Str, "4-[8,8,8]-1", "architecture D-[h1,h2,...]-1"},
          {"activation", OptKind::Str, "tanh", "tanh|sigmoid"},
          {"lr", OptKind::Real, lr, "Adam learning rate"},
          {"epochs", OptKind::Int, epochs, "maximum epochs"},
          {"patience", OptKind::Int, patience, "early-stopping patience on validation MAPE"},
          {"val-fraction", OptKind::Real, 0.2, "validation share split off the training data"},
          {"decay-factor", OptKind::Real, 1.0, "step-decay factor (1 = constant learning rate)"},
          {"decay-every", OptKind::Int, 1000, "epochs between learning-rate decays"}};
}

inline ArchSpec arch_of(const json &o) {
  ArchSpec a = ArchSpec::parse(str(o, "arch"));
  a.activation = parse_activation(str(o, "activation"));
  return a;
}

inline TrainConfig train_config_of(const json &o) {
  TrainConfig c;
  c.learning_rate = real(o, "lr");
  c.max_epochs = count(o, "epochs");
  c.early_stop_patience = count(o, "patience");
  c.val_fraction = real(o, "val-fraction");
  const double f = real(o, "decay-factor");
  if (f != 1.0) c.schedule = Schedule::step_decay(f, count(o, "decay-every"));
  c.validate();
  return c;
}

inline Dataset domain_data(const json &o, const std::string &path_key, SynthDomain domain) {
  const std::string path = str(o, path_key);
  if (!path.empty()) {
    Dataset ds = load_csv(path, str(o, "target"));
    ds.validate(true);
    return ds;
  }
  const bool water = domain == SynthDomain::WaterAnalog;
  const auto spec = default_synth_spec(domain, count(o, water ? "n-water" : "n-sodium"), real(o, "noise"),
                                       derive_seed(root_seed(o), water ? "data-water" : "data-sodium"));
  Dataset ds = synthesize(spec);
  ds.target_name = str(o, "target");
  return ds;
}

/// Source network trained on the normalized source domain.
inline Mlp train_source(const Dataset &source, const ArchSpec &arch, const TrainConfig &cfg, std::uint64_t seed) {
  const auto [z, st] = normalize(source);
  TrainConfig c = cfg;
  c.seed = derive_seed(seed, "source-train");
  auto r = apinn::train(init_mlp(arch, derive_seed(seed, "source-init")), std::nullopt, z, nullptr, c);
  r.net.input_norm = st;
  return r.net;
}

inline std::vector<double> parse_trace_column(const fs::path &path, const std::string &column) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trace '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("trace '" + path.string() + "' is empty");
  const auto header = detail::split_csv_line(line);
  const auto col = detail::column_index(header, column);
  std::vector<double> v;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (col >= cells.size()) throw DataError("trace row " + std::to_string(row) + " is short");
    if (cells[col].empty()) continue;
    try {
      v.push_back(std::stod(cells[col]));
    } catch (const std::logic_error &) {
      throw DataError("trace row " + std::to_string(row) + ": non-numeric " + column + " '" + cells[col] + "'");
    }
  }
  return v;
}

inline std::vector<double> tail(const std::vector<double> &v, double fraction) {
  const auto skip = static_cast<std::size_t>(std::floor(static_cast<double>(v.size()) * (1.0 - fraction)));
  return {v.begin() + static_cast<std::ptrdiff_t>(std::min(skip, v.size())), v.end()};
}

// ---------------------------------------------------------------------------
// gen-data

inline void cmd_gen_data(const json &o, std::ostream &log) {
  const std::string domain = str(o, "domain");
  if (domain != "water" && domain != "sodium" && domain != "both")
    throw UsageError("--domain must be water|sodium|both (got '" + domain + "')");
  const auto gen = [&](SynthDomain d, const std::string &name) {
    std::size_t n = count(o, d == SynthDomain::WaterAnalog ? "n-water" : "n-sodium");
    if (has(o, "n")) n = count(o, "n");
    const auto spec = default_synth_spec(d, n, real(o, "noise"), derive_seed(root_seed(o), "data-" + name));
    Dataset ds = synthesize(spec);
    ds.target_name = str(o, "target");
    emit(o, name + ".csv", to_csv(ds), log);
  };
  if (domain != "sodium") gen(SynthDomain::WaterAnalog, "water");
  if (domain != "water") gen(SynthDomain::SodiumAnalog, "sodium");
}

// ---------------------------------------------------------------------------
// train

inline ProblemOptions problem_options_of(const json &o) {
  ProblemOptions p;
  p.props.rho = real(o, "rho");
  p.props.cp = real(o, "cp");
  p.props.k_f = real(o, "kf");
  p.props.k_s = real(o, "ks");
  p.props.u_adv = real(o, "u");
  p.a = real(o, "a");
  p.b = real(o, "b");
  if (has(o, "ta")) p.t_a = real(o, "ta");
  if (has(o, "tb")) p.t_b = real(o, "tb");
  p.c_k = real(o, "c-k");
  p.n_collocation = count(o, "collocation");
  const std::string scheme = str(o, "scheme");
  if (scheme == "uniform") p.scheme = CollocationScheme::UniformRandom;
  else if (scheme == "equispaced") p.scheme = CollocationScheme::EquiSpaced;
  else throw UsageError("--scheme must be uniform|equispaced (got '" + scheme + "')");
  p.boundary_weight = real(o, "boundary-weight");
  p.seed = derive_seed(root_seed(o), "collocation");
  return p;
}

/// Points on [a, b] sampled from the problem's closed-form solution.
inline Dataset analytic_data(const PdeProblem &p, std::size_t n, double noise, std::uint64_t seed) {
  if (!p.exact) throw UsageError("problem '" + p.name + "' has no closed-form solution; pass --data");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(p.a, p.b);
  std::normal_distribution<double> eps(0.0, 1.0);
  Dataset ds;
  ds.feature_names = {"x"};
  ds.feature_units = {""};
  ds.target_name = "u";
  ds.dim = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ux(rng);
    ds.x.push_back(x);
    ds.y.push_back((*p.exact)(x).v * (1.0 + noise * eps(rng)));
  }
  return ds;
}

inline void cmd_train(const json &o, std::ostream &log) {
  const std::string mode = str(o, "mode");
  if (mode != "data" && mode != "pinn") throw UsageError("--mode must be data|pinn (got '" + mode + "')");
  const bool pinn = mode == "pinn";
  const std::string problem_name = str(o, "problem");
  const std::uint64_t seed = root_seed(o);
  TrainConfig cfg = train_config_of(o);
  cfg.seed = derive_seed(seed, "train");
  cfg.mode = pinn ? TrainMode::Pinn : TrainMode::DataOnly;
  cfg.alternate = flag(o, "alternate");
  cfg.alpha_lr_scale = real(o, "alpha-lr-scale");
  const ArchSpec arch = arch_of(o);

  Dataset ds;
  std::optional<PdeProblem> prob;
  std::optional<NormStats> norm;
  const std::string data_path = str(o, "data");
  if (problem_name == "sodium-profile" || problem_name.empty()) {
    if (pinn && problem_name.empty()) throw UsageError("--mode pinn needs --problem");
    if (data_path.empty()) throw UsageError("--data is required for data-mode training and the sodium-profile problem");
    ds = load_csv(data_path, str(o, "target"));
    ds.validate(true);
    auto [z, st] = normalize(ds);
    norm = st;
    if (pinn) {
      const std::size_t col = detail::column_index(ds.feature_names, str(o, "pe-column"));
      const auto [lo, hi] = detail::column_range(ds, col);
      prob = sodium_profile_problem(st, col, lo, hi, count(o, "collocation"), derive_seed(seed, "collocation"),
                                    real(o, "boundary-weight"));
    }
    ds = std::move(z);
  } else {
    prob = make_problem(problem_name, problem_options_of(o));
    if (!data_path.empty()) {
      ds = load_csv(data_path, str(o, "target"));
      ds.validate();
    } else {
      ds = analytic_data(*prob, count(o, "data-points"), real(o, "noise"), derive_seed(seed, "data-analytic"));
    }
  }
  if (ds.dim != arch.input_dim)
    throw UsageError("architecture input width " + std::to_string(arch.input_dim) + " does not match the " +
                     std::to_string(ds.dim) + " data columns");

  std::optional<BlendingNeuron> neuron;
  if (pinn) neuron = BlendingNeuron{real(o, "alpha0")};
  const auto r = apinn::train(init_mlp(arch, derive_seed(seed, "init")), neuron, ds, pinn ? &*prob : nullptr, cfg);
  Mlp net = r.net;
  net.input_norm = norm;
  emit(o, "model.json", dump(to_json(net)), log);
  emit(o, "train_report.csv", report_csv(r.report), log);
  json metrics = {{"best_val_mape", r.report.best_val_mape},
                  {"best_epoch", r.report.best_epoch},
                  {"epochs_run", r.report.epochs_run},
                  {"train_mape", dataset_mape(r.net, ds)}};
  if (pinn) {
    metrics["alpha"] = r.neuron.alpha;
    metrics["lambda_d"] = blend_weights(r.neuron.alpha).lambda_d;
    metrics["lambda_p"] = blend_weights(r.neuron.alpha).lambda_p;
    metrics["physics_loss"] = physics_loss(*prob, r.net);
    const auto hist_src = tail(r.report.lambda_p_trace(), real(o, "hist-tail"));
    const auto h = histogram(hist_src, count(o, "bins"));
    metrics["lambda_p_tail_mean"] = mean(hist_src);
    emit(o, "lambda_p_hist.csv", histogram_csv(h), log);
  }
  emit(o, "metrics.json", dump(metrics), log);
  log << "best validation MAPE " << r.report.best_val_mape << " at epoch " << r.report.best_epoch << "\n";
}

// ---------------------------------------------------------------------------
// transfer

inline void cmd_transfer(const json &o, std::ostream &log) {
  const std::uint64_t seed = root_seed(o);
  const ArchSpec arch = arch_of(o);
  const TrainConfig cfg = train_config_of(o);
  Mlp source;
  if (has(o, "source")) {
    source = load_mlp(str(o, "source"));
  } else {
    source = train_source(domain_data(o, "source-data", SynthDomain::WaterAnalog), arch, cfg, seed);
    emit(o, "source_model.json", dump(to_json(source)), log);
  }
  const Dataset target = domain_data(o, "data", SynthDomain::SodiumAnalog);
  const auto layers = parse_layers(str(o, "layers"));
  const double holdout = real(o, "holdout");
  const auto [train_raw, hold_raw] = split(target, 1.0 - holdout, derive_seed(seed, "split"));
  const auto [z, st] = normalize(train_raw);

  TransferPlan plan;
  plan.layers_to_copy = layers;
  plan.soft_freeze = flag(o, "soft-freeze");
  const Mlp init = transfer_init(source, arch, plan, derive_seed(seed, "init"));
  TrainConfig c = cfg;
  c.seed = derive_seed(seed, "train");
  auto r = train_frozen(init, std::nullopt, layers, false, z, nullptr, c, plan.soft_freeze);
  r.net.input_norm = st;
  const Dataset hold = apply_norm(hold_raw, st);
  json metrics = {{"layers", std::vector<std::size_t>(layers.begin(), layers.end())},
                  {"holdout_mape", dataset_mape(r.net, hold)},
                  {"epochs_run", r.report.epochs_run}};
  if (flag(o, "compare")) {
    const auto base = apinn::train(init_mlp(arch, derive_seed(seed, "init")), std::nullopt, z, nullptr, c);
    metrics["baseline_holdout_mape"] = dataset_mape(base.net, hold);
  }
  emit(o, "model.json", dump(to_json(r.net)), log);
  emit(o, "metrics.json", dump(metrics), log);

  if (flag(o, "sweep")) {
    SweepOptions so;
    so.seeds = seed_list(seed, count(o, "sweep-seeds"));
    so.holdout_fraction = holdout;
    so.soft_freeze = plan.soft_freeze;
    const auto [zt, st_all] = normalize(target);
    const auto rows = layer_sweep(source, arch, zt, nullptr, cfg, so, count(o, "jobs"));
    emit(o, "tl_layers.csv", sweep_csv(rows), log);
  }
}

// ---------------------------------------------------------------------------
// hyperopt

inline void cmd_hyperopt(const json &o, std::ostream &log) {
  const std::uint64_t seed = root_seed(o);
  const std::string method = str(o, "method"), model = str(o, "model");
  if (method != "rs" && method != "bo" && method != "ga") throw UsageError("--method must be rs|bo|ga (got '" + method + "')");
  if (model != "svr" && model != "nn") throw UsageError("--model must be svr|nn (got '" + model + "')");
  if (method == "ga" && model != "nn") throw UsageError("--method ga searches network architectures; use --model nn");
  const Dataset ds = domain_data(o, "data", SynthDomain::SodiumAnalog);
  const auto [z, st] = normalize(ds);
  const auto [inner_train, inner_val] = split(z, 0.8, derive_seed(seed, "search-split"));

  TrainConfig cfg = train_config_of(o);
  const auto train_nn = [&, inner_train = inner_train, inner_val = inner_val](const ArchSpec &a, double lr) {
    TrainConfig c = cfg;
    c.learning_rate = lr;
    c.seed = derive_seed(seed, "train");
    const auto r = apinn::train(init_mlp(a, derive_seed(seed, "init")), std::nullopt, inner_train, nullptr, c);
    return dataset_mape(r.net, inner_val);
  };

  if (method == "ga") {
    GaOptions go;
    go.population = count(o, "population", 4);
    go.generations = count(o, "generations");
    GenomeSpace gs;
    const auto res = ga_search(
        gs, [&](const Genome &g) { return train_nn(g.to_arch(ds.dim), g.learning_rate()); }, go,
        derive_seed(seed, "search"), count(o, "jobs"));
    std::string hist = "generation,best_fitness,best_so_far\n";
    for (std::size_t g = 0; g < res.generation_best.size(); ++g)
      hist += std::to_string(g) + "," + detail::format_real(res.generation_best[g]) + "," +
              detail::format_real(res.best_so_far[g]) + "\n";
    emit(o, "history.csv", hist, log);
    const ArchSpec best = res.best.to_arch(ds.dim);
    emit(o, "best.json",
         dump({{"objective", res.best_fitness},
               {"evaluations", res.evaluations},
               {"train", {{"arch", best.to_string()}, {"lr", res.best.learning_rate()}}}}),
         log);
    return;
  }

  ParamSpace space;
  Objective objective;
  double sh = 0, sc = 1;
  const Dataset ys = standardize_targets(inner_train, sh, sc);
  if (model == "svr") {
    space = SvrSearchOptions{}.space;
    objective = [&](const Point &p) {
      const SvrModel m = svr_fit(ys, p[0], p[1], p[2]);
      std::vector<double> pred;
      for (std::size_t i = 0; i < inner_val.rows(); ++i) pred.push_back(sh + sc * svr_predict(m, inner_val.row(i)));
      return mape(inner_val.y, pred).mape;
    };
  } else {
    space.dims = {Dimension::log_real("lr", 1e-4, 1e-1), Dimension::integer("layers", 1, 4),
                  Dimension::integer("width", 1, 64)};
    objective = [&](const Point &p) {
      ArchSpec a;
      a.input_dim = ds.dim;
      a.hidden.assign(static_cast<std::size_t>(p[1]), static_cast<std::size_t>(p[2]));
      return train_nn(a, p[0]);
    };
  }
  const std::size_t budget = count(o, "budget");
  const auto res = method == "rs" ? random_search(space, objective, budget, derive_seed(seed, "search"))
                                  : bayes_opt(space, objective, budget, count(o, "n-init", 2), derive_seed(seed, "search"));
  emit(o, "history.csv", history_csv(space, res), log);
  json point;
  for (std::size_t k = 0; k < space.dims.size(); ++k) point[space.dims[k].name] = res.best.point[k];
  json best = {{"objective", res.best.objective}, {"iter", res.best.iter}, {"point", point}};
  if (model == "nn") {
    ArchSpec a;
    a.input_dim = ds.dim;
    a.hidden.assign(static_cast<std::size_t>(res.best.point[1]), static_cast<std::size_t>(res.best.point[2]));
    best["train"] = {{"arch", a.to_string()}, {"lr", res.best.point[0]}};
  }
  emit(o, "best.json", dump(best), log);
}

// ---------------------------------------------------------------------------
// benchmark and mc-validate

inline ModelSpec make_spec(const std::string &name, const json &o, const Mlp *source) {
  const ArchSpec arch = arch_of(o);
  const TrainConfig cfg = train_config_of(o);
  if (name == "TL-NN") {
    if (!source) throw UsageError("TL-NN needs a source network");
    return tl_nn_spec(name, *source, arch, parse_layers(str(o, "layers")), cfg);
  }
  if (name == "NN") return nn_spec(name, arch, cfg);
  if (name == "PINN") {
    PinnSpecOptions po;
    po.n_collocation = count(o, "collocation");
    po.boundary_weight = real(o, "boundary-weight");
    return pinn_spec(name, arch, cfg, po);
  }
  if (name == "GP") return gp_spec(name, {0.01, 0.03, 0.1, 0.3, 1.0, 3.0}, {1e-4, 1e-3, 1e-2, 1e-1});
  SvrSearchOptions so;
  so.budget = count(o, "budget");
  so.n_init = count(o, "n-init", 2);
  if (name == "SVR-RS") {
    so.method = SearchMethod::Random;
    return svr_search_spec(name, so);
  }
  if (name == "SVR-Bayesian") {
    so.method = SearchMethod::Bayes;
    return svr_search_spec(name, so);
  }
  throw UsageError("unknown model '" + name + "' (expected TL-NN|NN|PINN|GP|SVR-RS|SVR-Bayesian)");
}

inline std::vector<std::string> model_names(const std::string &list) {
  std::vector<std::string> out;
  for (auto m : split_list(list)) {
    std::string up;
    for (char c : m) up += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (up == "SVR-BAYESIAN" || up == "SVR-BO") up = "SVR-Bayesian";
    out.push_back(up);
  }
  if (out.empty()) throw UsageError("model list is empty");
  return out;
}

inline void cmd_benchmark(const json &o, std::ostream &log) {
  const std::string preset = str(o, "preset");
  if (preset != "paper-shape") throw UsageError("unknown benchmark preset '" + preset + "' (expected paper-shape)");
  const std::uint64_t seed = root_seed(o);
  const Dataset target = domain_data(o, "data", SynthDomain::SodiumAnalog);
  const Mlp source =
      train_source(domain_data(o, "source-data", SynthDomain::WaterAnalog), arch_of(o), train_config_of(o), seed);
  std::vector<ModelSpec> specs;
  for (const char *m : {"TL-NN", "NN", "PINN", "GP", "SVR-RS", "SVR-Bayesian"}) specs.push_back(make_spec(m, o, &source));
  const auto rows = benchmark_suite(specs, target, seed_list(seed, count(o, "seeds")), real(o, "holdout"), count(o, "jobs"));
  emit(o, "benchmark.csv", benchmark_csv(rows), log);
  for (const auto &r : rows)
    log << r.model << ": " << (r.failed ? "failed (" + r.error + ")" : detail::format_real(r.median_mape)) << "\n";
}

inline void cmd_mc_validate(const json &o, std::ostream &log) {
  const std::uint64_t seed = root_seed(o);
  const auto names = model_names(str(o, "models"));
  const Dataset target = domain_data(o, "data", SynthDomain::SodiumAnalog);
  std::optional<Mlp> source;
  if (std::find(names.begin(), names.end(), "TL-NN") != names.end())
    source = train_source(domain_data(o, "source-data", SynthDomain::WaterAnalog), arch_of(o), train_config_of(o), seed);
  std::vector<RobustnessReport> rows;
  for (const auto &name : names) {
    const ModelSpec spec = make_spec(name, o, source ? &*source : nullptr);
    rows.push_back(monte_carlo_cv(spec, target, count(o, "trials", 2), real(o, "holdout"), derive_seed(seed, "mc"),
                                  count(o, "jobs")));
    log << name << ": max var(pred) " << rows.back().max_var_pred << ", max var(MAPE) " << rows.back().max_var_mape
        << ", avg epochs " << rows.back().avg_epochs << "\n";
  }
  emit(o, "robustness.csv", robustness_csv(rows), log);
  const auto find = [&](const std::string &n) -> const RobustnessReport * {
    for (const auto &r : rows)
      if (r.model == n) return &r;
    return nullptr;
  };
  const auto *pinn = find("PINN"), *nn = find("NN");
  if (pinn && nn) {
    const bool holds = pinn->max_var_pred < nn->max_var_pred;
    emit(o, "robustness_check.json",
         dump({{"check", "PINN max var(pred) < NN max var(pred)"},
               {"pinn_max_var_pred", pinn->max_var_pred},
               {"nn_max_var_pred", nn->max_var_pred},
               {"holds", holds}}),
         log);
    if (!holds)
      log << "warning: PINN prediction variance (" << pinn->max_var_pred << ") is not below NN (" << nn->max_var_pred
          << ")\n";
  }
}

// ---------------------------------------------------------------------------
// stats

inline void cmd_stats(const json &o, std::ostream &log) {
  const Dataset water = domain_data(o, "source-data", SynthDomain::WaterAnalog);
  const Dataset sodium = domain_data(o, "data", SynthDomain::SodiumAnalog);
  const auto u = mann_whitney_u(water.y, sodium.y);
  emit(o, "utest.json", dump(utest_json(u, "water", "sodium")), log);
  const std::size_t points = count(o, "kde-points", 2);
  for (const auto &[name, ds] : {std::pair<std::string, const Dataset *>{"water", &water}, {"sodium", &sodium}})
    emit(o, "kde_" + name + ".csv", kde_csv(kde(ds->y, kde_grid(ds->y, points))), log);
  if (has(o, "trace")) {
    const auto v = tail(parse_trace_column(str(o, "trace"), "lambda_p"), real(o, "hist-tail"));
    if (v.empty()) throw DataError("trace has no lambda_p values (was it a PINN run?)");
    emit(o, "lambda_p_hist.csv", histogram_csv(histogram(v, count(o, "bins"))), log);
  }
  log << "Mann-Whitney U=" << u.u << " p=" << u.p_value << "\n";
}

// ---------------------------------------------------------------------------
// Command table

inline std::vector<OptionDef> concat(std::vector<OptionDef> a, const std::vector<OptionDef> &b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

inline const std::vector<CommandDef> &commands() {
  static const std::vector<CommandDef> table = [] {
    std::vector<CommandDef> t;
    t.push_back({"gen-data",
                 "Write synthetic water.csv / sodium.csv analogs",
                 concat({{"domain", OptKind::Str, "both", "water|sodium|both"},
                         {"n", OptKind::Int, nullptr, "rows per generated domain (overrides --n-water/--n-sodium)"}},
                        data_options()),
                 cmd_gen_data});
    t.push_back({"train",
                 "Train a network (data mode) or an adaptive PINN",
                 concat(concat({{"mode", OptKind::Str, "data", "data|pinn"},
                                {"problem", OptKind::Str, nullptr,
                                 "conduction1d|conduction-vark1d|convdiff1d|sodium-profile"},
                                {"data", OptKind::Str, nullptr, "training CSV"},
                                {"target", OptKind::Str, "nu", "target column name"},
                                {"data-points", OptKind::Int, 40, "points sampled from a closed-form solution"},
                                {"noise", OptKind::Real, 0.0, "noise on sampled solution points"},
                                {"alternate", OptKind::Flag, false, "alternate data and physics epochs"},
                                {"alpha0", OptKind::Real, 0.0, "initial blending alpha"},
                                {"alpha-lr-scale", OptKind::Real, 1.0, "learning-rate multiplier for alpha"},
                                {"collocation", OptKind::Int, 64, "collocation points"},
                                {"scheme", OptKind::Str, "uniform", "uniform|equispaced collocation"},
                                {"boundary-weight", OptKind::Real, 1.0, "weight of the Dirichlet penalty"},
                                {"pe-column", OptKind::Str, "pe", "Peclet column for sodium-profile"},
                                {"rho", OptKind::Real, 1.0, "density"},
                                {"cp", OptKind::Real, 1.0, "specific heat"},
                                {"kf", OptKind::Real, 1.0, "fluid conductivity"},
                                {"ks", OptKind::Real, 1.0, "solid conductivity"},
                                {"u", OptKind::Real, 1.0, "advection velocity"},
                                {"c-k", OptKind::Real, 0.1, "conductivity temperature coefficient"},
                                {"a", OptKind::Real, 0.0, "domain start"},
                                {"b", OptKind::Real, 1.0, "domain end"},
                                {"ta", OptKind::Real, nullptr, "T(a) (default per problem)"},
                                {"tb", OptKind::Real, nullptr, "T(b) (default per problem)"},
                                {"bins", OptKind::Int, 20, "lambda_p histogram bins"},
                                {"hist-tail", OptKind::Real, 0.5, "trailing share of epochs in the histogram"}},
                               train_options(1e-3, 5000, 5000)),
                        {}),
                 cmd_train});
    // The train preset wants 1-D problem architectures by default.
    for (auto &d : t.back().options)
      if (d.name == "arch") d.fallback = "1-[16,16]-1";
    t.push_back({"transfer",
                 "Transfer layers from a source network and fine-tune on the target domain",
                 concat(concat({{"source", OptKind::Str, nullptr, "source checkpoint (default: train one)"},
                                {"layers", OptKind::Str, "0", "layers to copy and freeze, e.g. 0,1"},
                                {"soft-freeze", OptKind::Flag, false, "train copied layers at 0.1x lr"},
                                {"holdout", OptKind::Real, 0.2, "target holdout share"},
                                {"compare", OptKind::Flag, false, "also train a plain network on the same split"},
                                {"sweep", OptKind::Flag, false, "write the per-layer sweep tl_layers.csv"},
                                {"sweep-seeds", OptKind::Int, 5, "seeds per sweep row"}},
                               data_options()),
                        train_options(1e-2, 8000, 1500)),
                 cmd_transfer});
    t.push_back({"hyperopt",
                 "Random search, Bayesian optimization or GA architecture search",
                 concat(concat({{"method", OptKind::Str, "bo", "rs|bo|ga"},
                                {"model", OptKind::Str, "svr", "svr|nn"},
                                {"budget", OptKind::Int, 30, "objective evaluations (rs, bo)"},
                                {"n-init", OptKind::Int, 5, "random initial points (bo)"},
                                {"population", OptKind::Int, 20, "GA population"},
                                {"generations", OptKind::Int, 30, "GA generations"}},
                               data_options()),
                        train_options(1e-2, 1000, 200)),
                 cmd_hyperopt});
    const std::vector<OptionDef> model_opts = {
        {"layers", OptKind::Str, "0", "TL-NN transferred layers"},
        {"collocation", OptKind::Int, 32, "PINN collocation points"},
        {"boundary-weight", OptKind::Real, 1.0, "PINN boundary weight"},
        {"budget", OptKind::Int, 30, "SVR search budget"},
        {"n-init", OptKind::Int, 5, "SVR Bayesian initial points"},
        {"holdout", OptKind::Real, 0.2, "holdout share"}};
    t.push_back({"benchmark",
                 "Six-model MAPE comparison (benchmark.csv)",
                 concat(concat(concat({{"preset", OptKind::Str, "paper-shape", "paper-shape"},
                                       {"seeds", OptKind::Int, 5, "replicate seeds per model"}},
                                      model_opts),
                               data_options()),
                        train_options(1e-2, 8000, 1500)),
                 cmd_benchmark});
    t.push_back({"mc-validate",
                 "Monte Carlo robustness study (robustness.csv)",
                 concat(concat(concat({{"trials", OptKind::Int, 100, "Monte Carlo trials"},
                                       {"models", OptKind::Str, "TL-NN,NN,PINN", "comma-separated models"}},
                                      model_opts),
                               data_options()),
                        train_options(1e-2, 3000, 300)),
                 cmd_mc_validate});
    t.push_back({"stats",
                 "Mann-Whitney U test, KDE curves and lambda_p histogram",
                 concat({{"kde-points", OptKind::Int, 256, "KDE grid points"},
                         {"trace", OptKind::Str, nullptr, "train_report.csv of a PINN run"},
                         {"bins", OptKind::Int, 20, "lambda_p histogram bins"},
                         {"hist-tail", OptKind::Real, 0.5, "trailing share of epochs in the histogram"}},
                        data_options()),
                 cmd_stats});
    for (auto &c : t) {
      c.options.push_back({"seed", OptKind::Int, nullptr, "root seed (falls back to ADAPTIVE_PINN_SEED, then 42)"});
      c.options.push_back({"out", OptKind::Str, "out", "output directory"});
      c.options.push_back({"jobs", OptKind::Int, 1, "parallel workers"});
    }
    return t;
  }();
  return table;
}

inline const CommandDef &find_command(const std::string &name) {
  std::string names;
  for (const auto &c : commands()) {
    if (c.name == name) return c;
    names += (names.empty() ? "" : "|") + c.name;
  }
  throw UsageError("unknown command '" + name + "' (expected " + names + ")");
}

// ---------------------------------------------------------------------------
// Value conversion and config merging

inline json convert(const OptionDef &d, const std::string &text) {
  const auto bad = [&](const char *what) {
    return UsageError("--" + d.name + ": expected " + what + ", got '" + text + "'");
  };
  try {
    std::size_t used = 0;
    switch (d.kind) {
    case OptKind::Str: return text;
    case OptKind::Int: {
      const long long v = std::stoll(text, &used);
      if (used != text.size()) throw bad("an integer");
      return v;
    }
    case OptKind::Real: {
      const double v = std::stod(text, &used);
      if (used != text.size() || !std::isfinite(v)) throw bad("a finite number");
      return v;
    }
    case OptKind::Flag:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw bad("true|false");
    }
  } catch (const std::logic_error &) {
    throw bad(d.kind == OptKind::Int ? "an integer" : "a number");
  }
  return nullptr;
}

inline json check_config_value(const OptionDef &d, const json &v, const std::string &where) {
  if (v.is_null()) return v;
  const auto bad = [&] { return UsageError(where + ": option '" + d.name + "' has the wrong type"); };
  switch (d.kind) {
  case OptKind::Str:
    if (!v.is_string()) throw bad();
    break;
  case OptKind::Int:
    if (!v.is_number_integer()) throw bad();
    break;
  case OptKind::Real:
    if (!v.is_number()) throw bad();
    return v.get<double>();
  case OptKind::Flag:
    if (!v.is_boolean()) throw bad();
    break;
  }
  return v;
}

inline json load_json_file(const fs::path &p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open config '" + p.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error &e) {
    throw DataError("config '" + p.string() + "' is not valid JSON: " + e.what());
  }
}

/// Config layout: top-level keys apply to every command, a section named after
/// the command overrides them. Keys that no option recognizes are rejected.
inline void overlay_config(json &resolved, const CommandDef &cmd, const json &cfg, const std::string &where) {
  if (!cfg.is_object()) throw DataError(where + ": config must be a JSON object");
  std::set<std::string> command_names;
  for (const auto &c : commands()) command_names.insert(c.name);
  const auto apply = [&](const json &obj, bool strict) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (it.key() == "command" || command_names.count(it.key())) continue;
      const auto d = std::find_if(cmd.options.begin(), cmd.options.end(), [&](auto &o) { return o.name == it.key(); });
      if (d == cmd.options.end()) {
        if (strict) throw UsageError(where + ": unknown option '" + it.key() + "' for command " + cmd.name);
        continue;
      }
      resolved[d->name] = check_config_value(*d, it.value(), where);
    }
  };
  apply(cfg, false);
  if (cfg.contains(cmd.name)) {
    if (!cfg[cmd.name].is_object()) throw DataError(where + ": section '" + cmd.name + "' must be an object");
    apply(cfg[cmd.name], true);
  }
}

inline std::string flag_list(const CommandDef &cmd) {
  std::string s;
  for (const auto &d : cmd.options) s += (s.empty() ? "--" : ", --") + d.name;
  return s + ", --config, --help";
}

inline std::string escape_message(const std::string &m) {
  std::string out;
  for (char c : m) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out;
}

inline std::string error_line(int code, const std::string &kind, const std::string &msg) {
  return "error: code=" + std::to_string(code) + " kind=" + kind + " msg=\"" + escape_message(msg) + "\"";
}

inline std::string overview() {
  std::string s = "usage: apinn <command> [flags] | apinn --from-config config-resolved.json [flags]\n\ncommands:\n";
  for (const auto &c : commands()) s += "  " + c.name + std::string(14 - c.name.size(), ' ') + c.help + "\n";
  s += "\nprecedence: command-line flags > --config file (command section > top level) > "
       "ADAPTIVE_PINN_SEED (seed only) > built-in defaults\n"
       "exit codes: 0 ok, 1 usage, 2 data, 3 numerical\n";
  return s;
}

/// Resolves options for `cmd` from defaults, an optional config and argv.
inline json resolve(const CommandDef &cmd, std::vector<std::string> args, const json *base_config, std::ostream &out,
                    bool &help_shown) {
  CLI::App cli(cmd.help, "apinn " + cmd.name);
  cli.footer("Flags override --config values; the config's '" + cmd.name +
             "' section overrides its top-level keys. ADAPTIVE_PINN_SEED is the seed fallback.");
  std::vector<std::string> values(cmd.options.size());
  std::vector<CLI::Option *> handles;
  std::vector<bool> flags(cmd.options.size(), false);
  std::string config_path;
  for (std::size_t i = 0; i < cmd.options.size(); ++i) {
    const auto &d = cmd.options[i];
    std::string help = d.help;
    if (!d.fallback.is_null()) help += " [default: " + (d.fallback.is_string() ? d.fallback.get<std::string>() : d.fallback.dump()) + "]";
    if (d.kind == OptKind::Flag) {
      handles.push_back(cli.add_flag("--" + d.name)->description(help));
    } else {
      handles.push_back(cli.add_option("--" + d.name, values[i], help));
    }
  }
  cli.add_option("--config", config_path, "JSON config file");
  std::reverse(args.begin(), args.end());
  try {
    cli.parse(args);
  } catch (const CLI::CallForHelp &) {
    out << cli.help();
    help_shown = true;
    return {};
  } catch (const CLI::ParseError &e) {
    throw UsageError(std::string(e.what()) + "; valid flags for " + cmd.name + ": " + flag_list(cmd));
  }

  json resolved = json::object();
  for (const auto &d : cmd.options) resolved[d.name] = d.fallback;
  if (const char *env = std::getenv("ADAPTIVE_PINN_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      resolved["seed"] = v;
    } catch (const std::logic_error &) {
      throw UsageError(std::string("ADAPTIVE_PINN_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  if (base_config) overlay_config(resolved, cmd, *base_config, "--from-config");
  if (!config_path.empty()) overlay_config(resolved, cmd, load_json_file(config_path), "config '" + config_path + "'");
  for (std::size_t i = 0; i < cmd.options.size(); ++i) {
    if (handles[i]->count() == 0) continue;
    const auto &d = cmd.options[i];
    resolved[d.name] = d.kind == OptKind::Flag ? json(true) : convert(d, values[i]);
  }
  json &seed = resolved["seed"];
  if (seed.is_null()) seed = kDefaultSeed;
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0))
    throw UsageError("--seed must be a non-negative integer");
  seed = seed.get<std::uint64_t>();
  return resolved;
}

/// Returns the process exit code; diagnostics go to `err`, progress to `out`.
inline int run(const std::vector<std::string> &argv, std::ostream &out, std::ostream &err) {
  try {
    std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
    if (args.empty()) throw UsageError("missing command; run 'apinn --help'");
    if (args[0] == "--help" || args[0] == "-h") {
      out << overview();
      return 0;
    }
    std::optional<json> from;
    std::string command;
    if (args[0] == "--from-config") {
      if (args.size() < 2) throw UsageError("--from-config needs a path");
      from = load_json_file(args[1]);
      if (!from->is_object() || !from->contains("command") || !(*from)["command"].is_string())
        throw DataError("--from-config file '" + args[1] + "' has no \"command\" entry");
      command = (*from)["command"].get<std::string>();
      args.erase(args.begin(), args.begin() + 2);
    } else {
      command = args[0];
      args.erase(args.begin());
    }
    const CommandDef &cmd = find_command(command);
    bool help_shown = false;
    const json opts = resolve(cmd, args, from ? &*from : nullptr, out, help_shown);
    if (help_shown) return 0;
    json record = {{"command", cmd.name}, {cmd.name, opts}};
    write_file_atomic(fs::path(str(opts, "out")) / "config-resolved.json", dump(record));
    cmd.run(opts, out);
    return 0;
  } catch (const Error &e) {
    err << error_line(e.exit_code(), e.kind(), e.what()) << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error &e) {
    err << error_line(2, "data", e.what()) << "\n";
    return 2;
  } catch (const json::exception &e) {
    err << error_line(2, "data", e.what()) << "\n";
    return 2;
  } catch (const std::exception &e) {
    err << error_line(3, "numerical", e.what()) << "\n";
    return 3;
  }
}

} // namespace apinn::app
