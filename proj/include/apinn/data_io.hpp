#pragma once
/**
 * @file data_io.hpp
 * @brief Tabular regression datasets: CSV I/O, synthetic Nusselt-number
 * analogs, feature normalization and random splitting.
 */

#include "apinn/common.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace apinn {

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Row-major feature matrix plus one positive target column.
struct Dataset {
  std::vector<std::string> feature_names;
  std::vector<std::string> feature_units;
  std::string target_name = "nu";
  std::size_t dim = 0;
  std::vector<double> x; // rows() * dim
  std::vector<double> y;
  std::optional<NormStats> norm;

  std::size_t rows() const noexcept { return y.size(); }
  std::span<const double> row(std::size_t i) const { return {x.data() + i * dim, dim}; }
  double at(std::size_t i, std::size_t j) const { return x[i * dim + j]; }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.feature_names = feature_names;
    out.feature_units = feature_units;
    out.target_name = target_name;
    out.dim = dim;
    out.norm = norm;
    out.x.reserve(idx.size() * dim);
    out.y.reserve(idx.size());
    for (auto i : idx) {
      auto r = row(i);
      out.x.insert(out.x.end(), r.begin(), r.end());
      out.y.push_back(y[i]);
    }
    return out;
  }

  /// Throws DataError on shape problems or non-finite entries.
  void validate(bool require_positive_targets = false) const {
    if (dim == 0) throw DataError("dataset has no feature columns");
    if (y.empty()) throw DataError("no rows");
    if (x.size() != y.size() * dim) throw DataError("feature matrix size does not match rows x dim");
    if (feature_names.size() != dim) throw DataError("feature name count does not match dim");
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!std::isfinite(x[i]))
        throw DataError("non-finite feature at row " + std::to_string(i / dim + 1) + ", column '" +
                        feature_names[i % dim] + "'");
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!std::isfinite(y[i])) throw DataError("non-finite target at row " + std::to_string(i + 1));
      if (require_positive_targets && !(y[i] > 0))
        throw DataError("non-positive target at row " + std::to_string(i + 1));
    }
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string &line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

// "name[unit]" -> (name, unit)
inline std::pair<std::string, std::string> parse_header_cell(const std::string &cell) {
  const auto open = cell.find('[');
  if (open != std::string::npos && cell.back() == ']')
    return {trim(cell.substr(0, open)), cell.substr(open + 1, cell.size() - open - 2)};
  return {cell, ""};
}

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace detail

/// Reads a header-led CSV. The target is `target_column` when given,
/// otherwise the last column. Header cells may carry units as `name[unit]`.
inline Dataset load_csv(const std::filesystem::path &path, const std::string &target_column = "") {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path.string() + "' is empty (header row required)");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3); // UTF-8 BOM
  const auto header = detail::split_csv_line(line);
  if (header.size() < 2) throw DataError("'" + path.string() + "' needs at least 2 columns");

  std::size_t target = header.size() - 1;
  if (!target_column.empty()) {
    bool found = false;
    for (std::size_t c = 0; c < header.size(); ++c)
      if (detail::parse_header_cell(header[c]).first == target_column) {
        target = c;
        found = true;
      }
    if (!found) throw DataError("target column '" + target_column + "' not in header of '" + path.string() + "'");
  }

  Dataset ds;
  ds.dim = header.size() - 1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    auto [name, unit] = detail::parse_header_cell(header[c]);
    if (c == target) {
      ds.target_name = name;
    } else {
      ds.feature_names.push_back(name);
      ds.feature_units.push_back(unit);
    }
  }

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                      " cells, found " + std::to_string(cells.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v = 0;
      std::size_t used = 0;
      try {
        v = std::stod(cells[c], &used);
      } catch (const std::exception &) {
        used = 0;
      }
      if (used == 0 || used != cells[c].size() || !std::isfinite(v))
        throw DataError("row " + std::to_string(row) + ", column '" +
                        detail::parse_header_cell(header[c]).first + "': non-numeric value '" + cells[c] + "'");
      if (c == target)
        ds.y.push_back(v);
      else
        ds.x.push_back(v);
    }
  }
  if (row == 0) throw DataError("'" + path.string() + "': no rows");
  ds.validate();
  return ds;
}

inline std::string to_csv(const Dataset &ds) {
  std::string out;
  for (std::size_t j = 0; j < ds.dim; ++j) {
    out += ds.feature_names[j];
    if (j < ds.feature_units.size() && !ds.feature_units[j].empty()) out += "[" + ds.feature_units[j] + "]";
    out += ",";
  }
  out += ds.target_name + "\n";
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    for (double v : ds.row(i)) out += detail::format_real(v) + ",";
    out += detail::format_real(ds.y[i]) + "\n";
  }
  return out;
}

inline void save_csv(const Dataset &ds, const std::filesystem::path &path) {
  write_file_atomic(path, to_csv(ds));
}

// ---------------------------------------------------------------------------
// Synthetic analogs

enum class SynthDomain { WaterAnalog, SodiumAnalog };

struct FeatureRange {
  std::string name;
  std::string unit;
  double low;
  double high;
};

struct SynthSpec {
  SynthDomain domain = SynthDomain::SodiumAnalog;
  std::size_t n_points = 87;
  std::vector<FeatureRange> features;
  double noise_stddev = 0.0; // relative
  std::uint64_t seed = 0;

  void validate() const {
    if (n_points < 2) throw DataError("synthetic dataset needs n_points >= 2");
    if (features.empty()) throw DataError("synthetic dataset needs at least one feature");
    if (!(noise_stddev >= 0)) throw DataError("noise_stddev must be >= 0");
    for (const auto &f : features)
      if (!(f.low < f.high)) throw DataError("degenerate range for feature '" + f.name + "'");
  }
};

/// Water (Dittus-Boelter): columns re, pr, ar, w. Sodium (liquid-metal
/// Seban-Shimazaki form): columns pe, pr, ar, w. Geometry columns carry no
/// signal in either correlation; they mirror the inputs a heat-sink study varies.
inline SynthSpec default_synth_spec(SynthDomain domain, std::size_t n, double noise, std::uint64_t seed) {
  SynthSpec s;
  s.domain = domain;
  s.n_points = n;
  s.noise_stddev = noise;
  s.seed = seed;
  if (domain == SynthDomain::WaterAnalog) {
    s.features = {{"re", "-", 1.0e4, 1.0e5}, {"pr", "-", 2.0, 7.0}, {"ar", "-", 1.0, 4.0}, {"w", "mm", 1.0, 5.0}};
  } else {
    s.features = {{"pe", "-", 100.0, 3000.0}, {"pr", "-", 0.004, 0.01}, {"ar", "-", 1.0, 4.0}, {"w", "mm", 1.0, 5.0}};
  }
  return s;
}

inline double water_nusselt(double re, double pr) { return 0.023 * std::pow(re, 0.8) * std::pow(pr, 0.4); }
inline double sodium_nusselt(double pe) { return 5.0 + 0.025 * std::pow(pe, 0.8); }

namespace detail {
inline std::size_t column_index(const std::vector<std::string> &names, const std::string &name) {
  for (std::size_t j = 0; j < names.size(); ++j)
    if (names[j] == name) return j;
  throw DataError("synthetic domain requires a feature column named '" + name + "'");
}
} // namespace detail

/// Noise-free correlation value for one row of a dataset laid out like `names`.
inline double correlation_truth(SynthDomain domain, const std::vector<std::string> &names,
                                std::span<const double> row) {
  if (domain == SynthDomain::WaterAnalog)
    return water_nusselt(row[detail::column_index(names, "re")], row[detail::column_index(names, "pr")]);
  return sodium_nusselt(row[detail::column_index(names, "pe")]);
}

inline Dataset synthesize(const SynthSpec &spec) {
  spec.validate();
  Dataset ds;
  ds.dim = spec.features.size();
  for (const auto &f : spec.features) {
    ds.feature_names.push_back(f.name);
    ds.feature_units.push_back(f.unit);
  }
  ds.target_name = "nu";
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ds.x.reserve(spec.n_points * ds.dim);
  for (std::size_t i = 0; i < spec.n_points; ++i) {
    std::vector<double> r(ds.dim);
    for (std::size_t j = 0; j < ds.dim; ++j)
      r[j] = spec.features[j].low + (spec.features[j].high - spec.features[j].low) * unit(rng);
    const double truth = correlation_truth(spec.domain, ds.feature_names, r);
    const double noise = spec.noise_stddev > 0 ? spec.noise_stddev * gauss(rng) : 0.0;
    ds.x.insert(ds.x.end(), r.begin(), r.end());
    ds.y.push_back(truth * (1.0 + noise));
  }
  ds.validate(true);
  return ds;
}

// ---------------------------------------------------------------------------
// Normalization

/// Population (1/N) statistics per feature column.
inline NormStats compute_norm_stats(const Dataset &ds) {
  NormStats st;
  const auto n = static_cast<double>(ds.rows());
  st.mean.assign(ds.dim, 0.0);
  st.stddev.assign(ds.dim, 0.0);
  for (std::size_t j = 0; j < ds.dim; ++j) {
    double m = 0;
    for (std::size_t i = 0; i < ds.rows(); ++i) m += ds.at(i, j);
    m /= n;
    double v = 0;
    for (std::size_t i = 0; i < ds.rows(); ++i) v += (ds.at(i, j) - m) * (ds.at(i, j) - m);
    const double sd = std::sqrt(v / n);
    if (!(sd > 0) || sd <= 1e-14 * std::max(1.0, std::abs(m)))
      throw DataError("feature column '" + ds.feature_names[j] + "' is constant; cannot normalize");
    st.mean[j] = m;
    st.stddev[j] = sd;
  }
  return st;
}

/// Applies precomputed statistics; the result remembers them in `norm`.
inline Dataset apply_norm(const Dataset &ds, const NormStats &st) {
  if (st.mean.size() != ds.dim) throw DataError("normalization stats do not match dataset dim");
  Dataset out = ds;
  for (std::size_t i = 0; i < ds.rows(); ++i)
    for (std::size_t j = 0; j < ds.dim; ++j)
      out.x[i * ds.dim + j] = (ds.at(i, j) - st.mean[j]) / st.stddev[j];
  out.norm = st;
  return out;
}

inline std::pair<Dataset, NormStats> normalize(const Dataset &ds) {
  auto st = compute_norm_stats(ds);
  return {apply_norm(ds, st), st};
}

inline Dataset denormalize(const Dataset &ds) {
  if (!ds.norm) throw DataError("dataset carries no normalization stats");
  Dataset out = ds;
  for (std::size_t i = 0; i < ds.rows(); ++i)
    for (std::size_t j = 0; j < ds.dim; ++j)
      out.x[i * ds.dim + j] = ds.at(i, j) * ds.norm->stddev[j] + ds.norm->mean[j];
  out.norm.reset();
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitIndices {
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
};

/// Size of the first part: round-half-up of fraction * n.
inline std::size_t split_size(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
}

inline SplitIndices split_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction < 1)) throw DataError("split fraction must lie in (0, 1)");
  const std::size_t k = split_size(n, fraction);
  if (k == 0 || k >= n)
    throw DataError("split of " + std::to_string(n) + " rows at fraction " + detail::format_real(fraction) +
                    " leaves an empty part");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  SplitIndices s;
  s.first.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  s.second.assign(idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
  return s;
}

inline std::pair<Dataset, Dataset> split(const Dataset &ds, double fraction, std::uint64_t seed) {
  const auto s = split_indices(ds.rows(), fraction, seed);
  return {ds.subset(s.first), ds.subset(s.second)};
}

} // namespace apinn
