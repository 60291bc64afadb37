#pragma once
/**
 * @file stats.hpp
 * @brief Error metrics, Mann-Whitney U test, Gaussian KDE and histograms.
 */

#include "apinn/common.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace apinn {

struct MetricSummary {
  double mape = 0.0;
  std::vector<double> ape; // per-point |y_hat - y| / |y|
};

inline MetricSummary mape(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size())
    throw DataError("mape: length mismatch (" + std::to_string(y.size()) + " vs " + std::to_string(y_hat.size()) + ")");
  if (y.empty()) throw DataError("mape of empty vectors");
  MetricSummary m;
  m.ape.reserve(y.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 0.0) throw DataError("mape: ground-truth value is zero at index " + std::to_string(i));
    const double e = std::abs(y_hat[i] - y[i]) / std::abs(y[i]);
    m.ape.push_back(e);
    sum += e;
  }
  m.mape = sum / static_cast<double>(y.size());
  return m;
}

inline double mean(std::span<const double> v) {
  if (v.empty()) throw DataError("mean of empty set");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Population variance (1/N); 0 for a single value.
inline double variance(std::span<const double> v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

inline double sample_stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// Linear-interpolation quantile (type 7).
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw DataError("quantile of empty set");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
}

// ---------------------------------------------------------------------------
// Mann-Whitney U

enum class UTestMethod { Exact, NormalApprox };

struct UTestResult {
  double u = 0.0; // U of sample_a
  double p_value = 1.0;
  UTestMethod method = UTestMethod::Exact;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
};

/// Midranks (1-based) of the pooled sample.
inline std::vector<double> midranks(std::span<const double> pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return pooled[i] < pooled[j]; });
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = rank;
    i = j + 1;
  }
  return r;
}

inline constexpr std::size_t kExactUTestLimit = 8;

/// Two-sided test. Exact permutation distribution of U (conditional on ties)
/// when both samples have at most 8 values, otherwise the normal
/// approximation with tie and continuity corrections. `force` overrides the
/// choice; forced exact enumeration is capped at 24 pooled values.
inline UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                                  std::optional<UTestMethod> force = std::nullopt) {
  if (a.empty() || b.empty()) throw DataError("Mann-Whitney U needs two non-empty samples");
  if (force == UTestMethod::Exact && a.size() + b.size() > 24)
    throw UsageError("exact Mann-Whitney enumeration is limited to 24 pooled values");
  const std::size_t n1 = a.size(), n2 = b.size(), n = n1 + n2;
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto r = midranks(pooled);
  const double base = static_cast<double>(n1) * static_cast<double>(n1 + 1) / 2.0;
  double ra = 0.0;
  for (std::size_t i = 0; i < n1; ++i) ra += r[i];
  UTestResult out;
  out.u = ra - base;
  out.n_a = n1;
  out.n_b = n2;
  const double mu = static_cast<double>(n1) * static_cast<double>(n2) / 2.0;
  const double dev = std::abs(out.u - mu);

  if (force ? *force == UTestMethod::Exact : (n1 <= kExactUTestLimit && n2 <= kExactUTestLimit)) {
    out.method = UTestMethod::Exact;
    std::uint64_t hits = 0, total = 0;
    const std::uint32_t limit = 1u << n;
    for (std::uint32_t mask = 0; mask < limit; ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != n1) continue;
      double rs = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        if (mask & (1u << k)) rs += r[k];
      ++total;
      if (std::abs(rs - base - mu) >= dev - 1e-9) ++hits;
    }
    out.p_value = static_cast<double>(hits) / static_cast<double>(total);
    return out;
  }

  out.method = UTestMethod::NormalApprox;
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  const double nn = static_cast<double>(n);
  const double var =
      static_cast<double>(n1) * static_cast<double>(n2) / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
  if (!(var > 0.0)) {
    out.p_value = 1.0;
    return out;
  }
  const double z = std::max(0.0, dev - 0.5) / std::sqrt(var);
  out.p_value = std::clamp(std::erfc(z / std::sqrt(2.0)), std::numeric_limits<double>::min(), 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Kernel density estimate

struct KdeCurve {
  std::vector<double> grid;
  std::vector<double> density;
  double bandwidth = 0.0;
};

/// h = 0.9 min(sigma, IQR / 1.34) n^(-1/5); sigma is the sample stddev. Falls
/// back to sigma when the IQR vanishes.
inline double silverman_bandwidth(std::span<const double> sample) {
  if (sample.size() < 2) throw DataError("KDE needs at least 2 sample points");
  const double sd = sample_stddev(sample);
  if (!(sd > 0)) throw DataError("KDE sample is degenerate (zero spread)");
  std::vector<double> v(sample.begin(), sample.end());
  const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
  const double spread = iqr > 0 ? std::min(sd, iqr / 1.34) : sd;
  return 0.9 * spread * std::pow(static_cast<double>(sample.size()), -0.2);
}

inline KdeCurve kde(std::span<const double> sample, std::span<const double> grid) {
  KdeCurve c;
  c.bandwidth = silverman_bandwidth(sample);
  c.grid.assign(grid.begin(), grid.end());
  c.density.reserve(grid.size());
  const double norm = 1.0 / (static_cast<double>(sample.size()) * c.bandwidth);
  for (double g : grid) {
    double s = 0.0;
    for (double x : sample) s += normal_pdf((g - x) / c.bandwidth);
    c.density.push_back(s * norm);
  }
  return c;
}

/// Evenly spaced grid spanning the sample range padded by `pad` bandwidths.
inline std::vector<double> kde_grid(std::span<const double> sample, std::size_t points, double pad = 5.0) {
  const double h = silverman_bandwidth(sample);
  const auto [lo, hi] = std::minmax_element(sample.begin(), sample.end());
  const double a = *lo - pad * h, b = *hi + pad * h;
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i) g[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1);
  return g;
}

inline double trapezoid(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return s;
}

// ---------------------------------------------------------------------------
// Histograms (e.g. the lambda_p trace)

struct Histogram {
  double low = 0.0;
  double high = 1.0;
  std::vector<std::size_t> counts;

  double bin_left(std::size_t i) const { return low + (high - low) * static_cast<double>(i) / static_cast<double>(counts.size()); }
  std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }
};

/// Values outside [low, high] land in the edge bins so counts sum to the input size.
inline Histogram histogram(std::span<const double> values, std::size_t bins, double low = 0.0, double high = 1.0) {
  if (bins == 0 || !(low < high)) throw UsageError("histogram needs bins >= 1 and low < high");
  Histogram h{low, high, std::vector<std::size_t>(bins, 0)};
  for (double v : values) {
    const double t = (v - low) / (high - low) * static_cast<double>(bins);
    const auto k = static_cast<std::size_t>(std::clamp(std::floor(t), 0.0, static_cast<double>(bins - 1)));
    ++h.counts[k];
  }
  return h;
}

} // namespace apinn
