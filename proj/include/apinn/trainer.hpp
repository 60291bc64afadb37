#pragma once
/**
 * @file trainer.hpp
 * @brief Full-batch Adam training with step-decay scheduling and early
 * stopping on validation MAPE, for plain networks and adaptive PINNs.
 */

#include "apinn/blending.hpp"
#include "apinn/common.hpp"
#include "apinn/data_io.hpp"
#include "apinn/mlp.hpp"
#include "apinn/physics.hpp"
#include "apinn/stats.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace apinn {

enum class TrainMode { DataOnly, Pinn };

struct Schedule {
  enum class Kind { Constant, StepDecay };
  Kind kind = Kind::Constant;
  double factor = 1.0;
  std::size_t every = 1;

  static Schedule constant() { return {}; }
  static Schedule step_decay(double factor, std::size_t every) { return {Kind::StepDecay, factor, every}; }
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t max_epochs = 2000;
  Schedule schedule;
  std::size_t early_stop_patience = 200;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::DataOnly;
  bool alternate = false;       // alternate data / physics epochs instead of the joint objective
  double alpha_lr_scale = 1.0;  // multiplier on the learning rate of alpha
  bool fit_output_scaling = true; // standardize targets through the network's output map

  void validate() const {
    if (!(learning_rate >= 0)) throw UsageError("learning_rate must be >= 0");
    if (early_stop_patience < 1) throw UsageError("early_stop_patience must be >= 1");
    if (max_epochs < 1) throw UsageError("max_epochs must be >= 1");
    if (!(val_fraction > 0 && val_fraction < 1)) throw UsageError("val_fraction must lie in (0, 1)");
    if (schedule.kind == Schedule::Kind::StepDecay &&
        (!(schedule.factor > 0 && schedule.factor <= 1) || schedule.every == 0))
      throw UsageError("step decay needs factor in (0, 1] and every >= 1");
  }
};

inline double schedule_lr(double base_lr, std::size_t epoch, const Schedule &s) {
  if (s.kind == Schedule::Kind::Constant) return base_lr;
  return base_lr * std::pow(s.factor, static_cast<double>(epoch / s.every));
}

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update. `lr_scale[k] == 0` leaves parameter k and its
/// moments untouched.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState &st, double lr,
                      const AdamHyper &h = {}, std::span<const double> lr_scale = {}) {
  if (params.size() != grads.size() || st.m.size() != params.size() || st.v.size() != params.size())
    throw DataError("adam_step: parameter, gradient and state lengths differ");
  if (!lr_scale.empty() && lr_scale.size() != params.size()) throw DataError("adam_step: lr_scale length mismatch");
  for (std::size_t k = 0; k < grads.size(); ++k)
    if (!std::isfinite(grads[k])) throw NumericalError("adam_step: non-finite gradient at parameter " + std::to_string(k));
  ++st.t;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(st.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double scale = lr_scale.empty() ? 1.0 : lr_scale[k];
    if (scale == 0.0) continue;
    st.m[k] = h.beta1 * st.m[k] + (1.0 - h.beta1) * grads[k];
    st.v[k] = h.beta2 * st.v[k] + (1.0 - h.beta2) * grads[k] * grads[k];
    const double mhat = st.m[k] / c1, vhat = st.v[k] / c2;
    params[k] -= lr * scale * mhat / (std::sqrt(vhat) + h.eps);
  }
}

/// Patience counter on a minimized metric; epochs are 1-based.
class EarlyStopper {
public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  /// Returns true when training should stop after this epoch.
  bool update(std::size_t epoch, double value) {
    if (value < best_) {
      best_ = value;
      best_epoch_ = epoch;
      stale_ = 0;
      return false;
    }
    return ++stale_ >= patience_;
  }

  bool improved_at(std::size_t epoch) const noexcept { return best_epoch_ == epoch; }
  double best() const noexcept { return best_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }

private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double total = 0.0;
  double data = 0.0;
  double physics = 0.0;
  double lambda_p = std::numeric_limits<double>::quiet_NaN();
  double val_mape = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_val_mape = std::numeric_limits<double>::infinity();
  double wall_seconds = 0.0;
  double initial_alpha = 0.0;
  TrainMode mode = TrainMode::DataOnly;

  std::vector<double> lambda_p_trace() const {
    std::vector<double> v;
    for (const auto &e : epochs)
      if (std::isfinite(e.lambda_p)) v.push_back(e.lambda_p);
    return v;
  }
};

struct TrainResult {
  Mlp net;
  BlendingNeuron neuron;
  TrainReport report;
};

inline std::vector<double> predict_all(const Mlp &net, const Dataset &ds) {
  std::vector<double> out;
  out.reserve(ds.rows());
  for (std::size_t i = 0; i < ds.rows(); ++i) out.push_back(forward(net, ds.row(i)));
  return out;
}

inline double dataset_mape(const Mlp &net, const Dataset &ds) { return mape(ds.y, predict_all(net, ds)).mape; }

inline void fit_output_scaling(Mlp &net, std::span<const double> y) {
  const double m = mean(y);
  const double sd = std::sqrt(variance(y));
  net.output = {m, sd > 0 ? sd : 1.0};
}

/// Trains on `ds` minus a validation split and returns the parameters of the
/// best-validation epoch. `lr_scale` (length params [+1 for alpha]) holds
/// per-parameter learning-rate multipliers; 0 freezes.
inline TrainResult train(Mlp net, std::optional<BlendingNeuron> neuron, const Dataset &ds, const PdeProblem *prob,
                         const TrainConfig &cfg, std::span<const double> lr_scale = {}) {
  cfg.validate();
  const bool pinn = cfg.mode == TrainMode::Pinn;
  if (pinn && (!neuron || !prob)) throw UsageError("Pinn mode needs a blending neuron and a PDE problem");
  if (!pinn && (neuron || prob)) throw UsageError("DataOnly mode takes neither a blending neuron nor a PDE problem");
  if (prob) prob->validate();
  const std::size_t n_params = net.params.size() + (pinn ? 1 : 0);
  if (!lr_scale.empty() && lr_scale.size() != n_params)
    throw UsageError("lr_scale has " + std::to_string(lr_scale.size()) + " entries, expected " + std::to_string(n_params));

  const auto start = std::chrono::steady_clock::now();
  const auto [train_set, val_set] = split(ds, 1.0 - cfg.val_fraction, derive_seed(cfg.seed, "val-split"));
  if (cfg.fit_output_scaling) fit_output_scaling(net, train_set.y);

  std::vector<double> scale(n_params, 1.0);
  if (!lr_scale.empty()) scale.assign(lr_scale.begin(), lr_scale.end());
  if (pinn) scale.back() *= cfg.alpha_lr_scale;

  std::vector<double> theta = net.params;
  if (pinn) theta.push_back(neuron->alpha);

  TrainResult best;
  best.net = net;
  best.neuron = neuron.value_or(BlendingNeuron{});
  best.report.mode = cfg.mode;
  best.report.initial_alpha = best.neuron.alpha;
  TrainReport &rep = best.report;

  AdamState adam(n_params);
  const AdamHyper hyper{cfg.beta1, cfg.beta2, cfg.eps};
  EarlyStopper stopper(cfg.early_stop_patience);
  Mlp current = net;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::copy(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(net.params.size()), current.params.begin());
    const double alpha = pinn ? theta.back() : 0.0;
    LossEval ev;
    if (pinn) {
      LossTerms terms = LossTerms::Both;
      if (cfg.alternate) terms = epoch % 2 == 1 ? LossTerms::DataOnly : LossTerms::PhysicsOnly;
      ev = composite_loss_grad(current, alpha, train_set, *prob, terms);
    } else {
      ev = data_loss_grad(current, train_set);
    }
    if (!std::isfinite(ev.breakdown.total))
      throw NumericalError("training loss became non-finite at epoch " + std::to_string(epoch));

    EpochRecord rec;
    rec.epoch = epoch;
    rec.total = ev.breakdown.total;
    rec.data = ev.breakdown.data_loss;
    rec.physics = ev.breakdown.physics_loss;
    if (pinn) rec.lambda_p = ev.breakdown.weights.lambda_p;
    rec.val_mape = dataset_mape(current, val_set);
    rec.lr = schedule_lr(cfg.learning_rate, epoch - 1, cfg.schedule);
    rep.epochs.push_back(rec);
    rep.epochs_run = epoch;

    const bool stop = stopper.update(epoch, rec.val_mape);
    if (stopper.improved_at(epoch)) {
      best.net.params = current.params;
      best.net.output = current.output;
      if (pinn) best.neuron.alpha = alpha;
      rep.best_epoch = epoch;
      rep.best_val_mape = rec.val_mape;
    }
    if (stop) break;
    adam_step(theta, ev.grad, adam, rec.lr, hyper, scale);
  }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return best;
}

inline std::string report_csv(const TrainReport &rep) {
  std::string out = "epoch,total,data,physics,lambda_p,val_mape,lr\n";
  const auto num = [](double v) { return std::isfinite(v) ? detail::format_real(v) : std::string(); };
  for (const auto &e : rep.epochs)
    out += std::to_string(e.epoch) + "," + num(e.total) + "," + num(e.data) + "," + num(e.physics) + "," +
           num(e.lambda_p) + "," + num(e.val_mape) + "," + num(e.lr) + "\n";
  return out;
}

} // namespace apinn
