#pragma once
/**
 * @file transfer.hpp
 * @brief Layer transfer from a source network, layer freezing during
 * fine-tuning, and the per-layer transfer sweep.
 */

#include "apinn/common.hpp"
#include "apinn/mlp.hpp"
#include "apinn/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace apinn {

struct TransferPlan {
  std::filesystem::path source_checkpoint; // informational when the source is passed in memory
  std::set<std::size_t> layers_to_copy;    // 0-based from the input; the output layer is hidden.size()
  bool freeze_copied = true;
  bool fine_tune_alpha = true;
  bool soft_freeze = false; // copied layers train at soft_freeze_factor x lr instead of freezing
  double soft_freeze_factor = 0.1;
};

namespace detail {
inline std::string shape_string(const ad::LayerBlock &b) {
  return std::to_string(b.fan_out) + "x" + std::to_string(b.fan_in);
}
} // namespace detail

/// Fresh target network (seeded) whose planned layers are copied bitwise from `source`.
inline Mlp transfer_init(const Mlp &source, const ArchSpec &target_arch, const TransferPlan &plan, std::uint64_t seed) {
  Mlp target = init_mlp(target_arch, seed);
  const auto sb = source.arch.blocks();
  const auto tb = target_arch.blocks();
  for (std::size_t l : plan.layers_to_copy) {
    if (l >= sb.size() || l >= tb.size())
      throw DataError("transfer layer " + std::to_string(l) + " does not exist in both networks (source has " +
                      std::to_string(sb.size()) + " layers, target " + std::to_string(tb.size()) + ")");
    if (sb[l].fan_in != tb[l].fan_in || sb[l].fan_out != tb[l].fan_out)
      throw DataError("transfer layer " + std::to_string(l) + ": source shape " + detail::shape_string(sb[l]) +
                      " does not match target shape " + detail::shape_string(tb[l]));
    std::copy_n(source.params.begin() + static_cast<std::ptrdiff_t>(sb[l].offset), sb[l].size(),
                target.params.begin() + static_cast<std::ptrdiff_t>(tb[l].offset));
  }
  return target;
}

/// Per-parameter learning-rate multipliers: `frozen_factor` on the listed
/// layers, 1 elsewhere; the trailing alpha slot (when `with_alpha`) is 1 or 0.
inline std::vector<double> layer_lr_scale(const ArchSpec &arch, const std::set<std::size_t> &layers,
                                          double frozen_factor, bool with_alpha, bool train_alpha) {
  const auto blocks = arch.blocks();
  std::vector<double> s(arch.param_count() + (with_alpha ? 1 : 0), 1.0);
  for (std::size_t l : layers) {
    if (l >= blocks.size()) throw DataError("frozen layer " + std::to_string(l) + " out of range");
    std::fill_n(s.begin() + static_cast<std::ptrdiff_t>(blocks[l].offset), blocks[l].size(), frozen_factor);
  }
  if (with_alpha) s.back() = train_alpha ? 1.0 : 0.0;
  return s;
}

/// trainer::train with the listed layers held fixed (or slowed, with soft_freeze).
inline TrainResult train_frozen(const Mlp &net, std::optional<BlendingNeuron> neuron,
                                const std::set<std::size_t> &frozen_layers, bool fine_tune_alpha, const Dataset &ds,
                                const PdeProblem *prob, const TrainConfig &cfg, bool soft_freeze = false,
                                double soft_factor = 0.1) {
  const bool pinn = cfg.mode == TrainMode::Pinn;
  const auto scale = layer_lr_scale(net.arch, frozen_layers, soft_freeze ? soft_factor : 0.0, pinn, fine_tune_alpha);
  return train(net, neuron, ds, prob, cfg, scale);
}

struct SweepRow {
  std::size_t layer_index = 0;
  double median_mape = 0.0;
  std::size_t seeds = 0;
  std::vector<double> mapes;
};

struct SweepOptions {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  double holdout_fraction = 0.2;
  bool soft_freeze = false;
};

/// For each hidden layer k: copy layer k of `source` into a fresh target,
/// freeze it, fine-tune on a seeded train split of `target_ds`, and score the
/// holdout. `target_ds` must already be in the source's feature space
/// (same columns, normalized). The blending scalar restarts at 0 per run.
inline std::vector<SweepRow> layer_sweep(const Mlp &source, const ArchSpec &target_arch, const Dataset &target_ds,
                                         const PdeProblem *prob, const TrainConfig &cfg, const SweepOptions &opt = {},
                                         std::size_t jobs = 1) {
  if (opt.seeds.size() < 1) throw UsageError("layer sweep needs at least one seed");
  const std::size_t n_hidden = std::min(source.arch.hidden.size(), target_arch.hidden.size());
  if (n_hidden == 0) throw DataError("layer sweep needs networks with hidden layers");
  for (std::size_t k = 0; k < n_hidden; ++k) {
    TransferPlan probe;
    probe.layers_to_copy = {k};
    (void)transfer_init(source, target_arch, probe, 0); // shape check up front
  }
  std::vector<SweepRow> rows(n_hidden);
  const std::size_t per_row = opt.seeds.size();
  std::vector<double> results(n_hidden * per_row);
  parallel_for(results.size(), jobs, [&](std::size_t job) {
    const std::size_t k = job / per_row, s = job % per_row;
    const std::uint64_t seed = opt.seeds[s];
    const auto [train_set, holdout] = split(target_ds, 1.0 - opt.holdout_fraction, derive_seed(seed, "split"));
    TransferPlan plan;
    plan.layers_to_copy = {k};
    const Mlp init = transfer_init(source, target_arch, plan, derive_seed(seed, "init"));
    TrainConfig c = cfg;
    c.seed = derive_seed(seed, "train");
    std::optional<BlendingNeuron> neuron;
    if (c.mode == TrainMode::Pinn) neuron = BlendingNeuron{};
    const auto r = train_frozen(init, neuron, plan.layers_to_copy, true, train_set,
                                c.mode == TrainMode::Pinn ? prob : nullptr, c, opt.soft_freeze);
    results[job] = dataset_mape(r.net, holdout);
  });
  for (std::size_t k = 0; k < n_hidden; ++k) {
    rows[k].layer_index = k;
    rows[k].mapes.assign(results.begin() + static_cast<std::ptrdiff_t>(k * per_row),
                         results.begin() + static_cast<std::ptrdiff_t>((k + 1) * per_row));
    rows[k].median_mape = median(rows[k].mapes);
    rows[k].seeds = per_row;
  }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow> &rows) {
  std::string out = "layer_index,median_mape,seeds\n";
  for (const auto &r : rows)
    out += std::to_string(r.layer_index) + "," + detail::format_real(r.median_mape) + "," + std::to_string(r.seeds) + "\n";
  return out;
}

} // namespace apinn
