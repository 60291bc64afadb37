#pragma once
/**
 * @file mlp.hpp
 * @brief Fully connected regression network with smooth activations.
 *
 * Forward passes are templated on the parameter scalar so the same code
 * runs on plain doubles (inference), tape variables (parameter gradients)
 * and second-order tangents (input derivatives for physics residuals).
 */

#include "apinn/autodiff.hpp"
#include "apinn/common.hpp"
#include "apinn/data_io.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace apinn {

enum class Activation { Tanh, Sigmoid };

inline std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "sigmoid"; }

inline Activation parse_activation(const std::string &s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw UsageError("unknown activation '" + s + "' (expected tanh|sigmoid)");
}

struct ArchSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 1;
  Activation activation = Activation::Tanh;

  std::size_t layer_count() const noexcept { return hidden.size() + 1; }

  std::vector<ad::LayerBlock> blocks() const {
    std::vector<ad::LayerBlock> out;
    std::size_t fan_in = input_dim, offset = 0;
    for (std::size_t l = 0; l <= hidden.size(); ++l) {
      const std::size_t fan_out = l < hidden.size() ? hidden[l] : output_dim;
      out.push_back({fan_in, fan_out, offset});
      offset += fan_in * fan_out + fan_out;
      fan_in = fan_out;
    }
    return out;
  }

  std::size_t param_count() const { return blocks().back().end(); }

  void validate() const {
    if (input_dim == 0 || output_dim == 0) throw UsageError("architecture widths must be >= 1");
    for (auto h : hidden)
      if (h == 0) throw UsageError("hidden widths must be >= 1");
    if (output_dim != 1) throw UsageError("only single-output regression networks are supported");
  }

  /// "D-[h1,h2,...]-1"
  std::string to_string() const {
    std::string s = std::to_string(input_dim) + "-[";
    for (std::size_t i = 0; i < hidden.size(); ++i) s += (i ? "," : "") + std::to_string(hidden[i]);
    return s + "]-" + std::to_string(output_dim);
  }

  static ArchSpec parse(const std::string &text) {
    const auto bad = [&] { return UsageError("malformed architecture '" + text + "' (expected D-[h1,h2,...]-1)"); };
    const auto open = text.find("-[");
    const auto close = text.find("]-");
    if (open == std::string::npos || close == std::string::npos || close < open) throw bad();
    ArchSpec a;
    try {
      std::size_t used = 0;
      a.input_dim = std::stoul(text.substr(0, open), &used);
      if (used != open) throw bad();
      const std::string inner = text.substr(open + 2, close - open - 2);
      std::stringstream in(inner);
      std::string cell;
      while (std::getline(in, cell, ',')) {
        cell = detail::trim(cell);
        if (cell.empty()) throw bad();
        a.hidden.push_back(std::stoul(cell, &used));
        if (used != cell.size()) throw bad();
      }
      const std::string tail = text.substr(close + 2);
      a.output_dim = std::stoul(tail, &used);
      if (used != tail.size()) throw bad();
    } catch (const std::logic_error &) {
      throw bad();
    }
    a.validate();
    return a;
  }

  bool operator==(const ArchSpec &) const = default;
};

/// Fixed affine map on the raw output, `shift + scale * raw`, so the network
/// trains in standardized target units while reporting physical values.
struct OutputScaling {
  double shift = 0.0;
  double scale = 1.0;
};

struct Mlp {
  ArchSpec arch;
  std::vector<double> params;
  OutputScaling output;
  std::optional<NormStats> input_norm; // carried for checkpoint consumers; forward ignores it

  ad::ParamVector param_vector(bool with_alpha = false, double alpha = 0.0) const {
    ad::ParamVector pv;
    pv.layers = arch.blocks();
    pv.has_alpha = with_alpha;
    pv.values = params;
    if (with_alpha) pv.values.push_back(alpha);
    return pv;
  }
};

/// Xavier-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
inline Mlp init_mlp(const ArchSpec &arch, std::uint64_t seed) {
  arch.validate();
  Mlp net;
  net.arch = arch;
  net.params.assign(arch.param_count(), 0.0);
  std::mt19937_64 rng(seed);
  for (const auto &b : arch.blocks()) {
    const double limit = std::sqrt(6.0 / static_cast<double>(b.fan_in + b.fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t k = 0; k < b.weight_count(); ++k) net.params[b.offset + k] = dist(rng);
  }
  return net;
}

/// Xavier re-initialization of the layers listed in `layers` only.
inline void reinit_layers(Mlp &net, std::span<const std::size_t> layers, std::uint64_t seed) {
  const auto blocks = net.arch.blocks();
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto &b = blocks[l];
    const double limit = std::sqrt(6.0 / static_cast<double>(b.fan_in + b.fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    const bool selected = std::find(layers.begin(), layers.end(), l) != layers.end();
    for (std::size_t k = 0; k < b.weight_count(); ++k) {
      const double w = dist(rng); // always drawn so layer streams don't shift
      if (selected) net.params[b.offset + k] = w;
    }
    if (selected)
      for (std::size_t k = 0; k < b.fan_out; ++k) net.params[b.bias_offset() + k] = 0.0;
  }
}

namespace detail {

template <class T> T activate(Activation a, const T &z) {
  using std::tanh;
  using ad::tanh;
  using ad::sigmoid;
  return a == Activation::Tanh ? tanh(z) : sigmoid(z);
}

inline void check_input(const ArchSpec &arch, std::size_t n) {
  if (n != arch.input_dim)
    throw DataError("input has " + std::to_string(n) + " features, network expects " + std::to_string(arch.input_dim));
}

template <class P> void check_params(const ArchSpec &arch, std::span<const P> params) {
  if (params.size() < arch.param_count())
    throw DataError("parameter vector too short for architecture " + arch.to_string());
}

} // namespace detail

/// Scalar prediction; P is double or ad::Var. `params` may be longer than the
/// network (a trailing blending slot is ignored).
template <class P>
P forward(const ArchSpec &arch, std::span<const P> params, std::span<const double> x, const OutputScaling &out = {}) {
  detail::check_input(arch, x.size());
  detail::check_params(arch, params);
  const auto blocks = arch.blocks();
  std::vector<P> h, next;
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto &b = blocks[l];
    next.resize(b.fan_out);
    for (std::size_t o = 0; o < b.fan_out; ++o) {
      const auto w = params.subspan(b.offset + o * b.fan_in, b.fan_in);
      const P &bias = params[b.bias_offset() + o];
      next[o] = l == 0 ? ad::dot(w, x, bias) : ad::dot(w, std::span<const P>(h), bias);
    }
    if (l + 1 < blocks.size())
      for (auto &z : next) z = detail::activate(arch.activation, z);
    std::swap(h, next);
  }
  return out.shift + out.scale * h[0];
}

inline double forward(const Mlp &net, std::span<const double> x) {
  return forward<double>(net.arch, net.params, x, net.output);
}

/// (u, du/dx_dim, d2u/dx_dim^2) at x; P is double or ad::Var.
template <class P>
ad::Taylor2<P> forward_taylor(const ArchSpec &arch, std::span<const P> params, std::span<const double> x,
                              std::size_t dim, const OutputScaling &out = {}) {
  detail::check_input(arch, x.size());
  detail::check_params(arch, params);
  if (dim >= arch.input_dim)
    throw DataError("derivative dimension " + std::to_string(dim) + " out of range for input_dim " +
                    std::to_string(arch.input_dim));
  const auto blocks = arch.blocks();
  std::vector<P> hv, h1, h2, nv, n1, n2;
  const P zero(0.0);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto &b = blocks[l];
    nv.resize(b.fan_out);
    n1.resize(b.fan_out);
    n2.resize(b.fan_out);
    for (std::size_t o = 0; o < b.fan_out; ++o) {
      const auto w = params.subspan(b.offset + o * b.fan_in, b.fan_in);
      const P &bias = params[b.bias_offset() + o];
      if (l == 0) {
        nv[o] = ad::dot(w, x, bias);
        n1[o] = w[dim];
        n2[o] = zero;
      } else {
        nv[o] = ad::dot(w, std::span<const P>(hv), bias);
        n1[o] = ad::dot(w, std::span<const P>(h1), zero);
        n2[o] = ad::dot(w, std::span<const P>(h2), zero);
      }
    }
    if (l + 1 < blocks.size()) {
      for (std::size_t o = 0; o < b.fan_out; ++o) {
        const ad::Taylor2<P> z{nv[o], n1[o], n2[o]};
        const ad::Taylor2<P> a = arch.activation == Activation::Tanh ? ad::tanh(z) : ad::sigmoid(z);
        nv[o] = a.v;
        n1[o] = a.d1;
        n2[o] = a.d2;
      }
    }
    std::swap(hv, nv);
    std::swap(h1, n1);
    std::swap(h2, n2);
  }
  return {out.shift + out.scale * hv[0], out.scale * h1[0], out.scale * h2[0]};
}

inline std::array<double, 3> forward_with_input_derivs(const Mlp &net, std::span<const double> x, std::size_t dim) {
  const auto t = forward_taylor<double>(net.arch, net.params, x, dim, net.output);
  return {t.v, t.d1, t.d2};
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned JSON {version, arch, activation, output, params[]}

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const Mlp &net) {
  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  j["arch"] = net.arch.to_string();
  j["activation"] = to_string(net.arch.activation);
  j["output"] = {{"shift", net.output.shift}, {"scale", net.output.scale}};
  if (net.input_norm) j["input_norm"] = {{"mean", net.input_norm->mean}, {"stddev", net.input_norm->stddev}};
  j["params"] = net.params;
  return j;
}

inline Mlp mlp_from_json(const nlohmann::json &j, const std::optional<ArchSpec> &expected = std::nullopt) {
  Mlp net;
  try {
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw DataError("unsupported checkpoint version " + j.at("version").dump());
    net.arch = ArchSpec::parse(j.at("arch").get<std::string>());
    if (j.contains("activation")) net.arch.activation = parse_activation(j.at("activation").get<std::string>());
    if (j.contains("output")) {
      net.output.shift = j.at("output").at("shift").get<double>();
      net.output.scale = j.at("output").at("scale").get<double>();
    }
    if (j.contains("input_norm"))
      net.input_norm = NormStats{j.at("input_norm").at("mean").get<std::vector<double>>(),
                                 j.at("input_norm").at("stddev").get<std::vector<double>>()};
    net.params = j.at("params").get<std::vector<double>>();
  } catch (const nlohmann::json::exception &e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  } catch (const UsageError &e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
  const std::size_t want = net.arch.param_count();
  if (net.params.size() != want)
    throw DataError("checkpoint parameter count mismatch: expected " + std::to_string(want) + ", found " +
                    std::to_string(net.params.size()));
  for (double p : net.params)
    if (!std::isfinite(p)) throw DataError("checkpoint contains non-finite parameter");
  if (expected && !(*expected == net.arch))
    throw DataError("checkpoint architecture " + net.arch.to_string() + " does not match expected " +
                    expected->to_string());
  return net;
}

inline void save_mlp(const Mlp &net, const std::filesystem::path &path) {
  write_file_atomic(path, to_json(net).dump(1) + "\n");
}

inline Mlp load_mlp(const std::filesystem::path &path, const std::optional<ArchSpec> &expected = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception &e) {
    throw DataError("malformed checkpoint '" + path.string() + "': " + e.what());
  }
  return mlp_from_json(j, expected);
}

} // namespace apinn
