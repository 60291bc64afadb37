#pragma once
/**
 * @file physics.hpp
 * @brief Reduced 1-D heat-transfer residual problems (steady conduction with
 * a source, conduction with temperature-dependent conductivity, steady
 * convection-diffusion) and their physics loss over collocation points.
 */

#include "apinn/autodiff.hpp"
#include "apinn/common.hpp"
#include "apinn/data_io.hpp"
#include "apinn/mlp.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace apinn {

enum class ProblemKind { Conduction1D, ConductionVarK1D, ConvDiff1D };

/// Material and flow properties. Pressure and gravity are recorded for
/// completeness; the reduced problems do not solve the momentum balance.
struct FluidProperties {
  double rho = 1.0;
  double mu = 1.0;
  double cp = 1.0;
  double k_f = 1.0;
  double k_s = 1.0;
  double g = 9.81;
  double u_adv = 1.0;
  double P = 0.0;

  void validate() const {
    if (!(rho > 0 && cp > 0 && k_f > 0 && k_s > 0)) throw UsageError("rho, cp, k_f and k_s must be positive");
  }
};

using Field = std::function<ad::Taylor2<double>(double)>;

struct PdeProblem {
  std::string name;
  ProblemKind kind = ProblemKind::Conduction1D;
  double a = 0.0;
  double b = 1.0;
  double t_a = 0.0; // Dirichlet T(a)
  double t_b = 0.0; // Dirichlet T(b)
  std::function<double(double)> source = [](double) { return 0.0; };
  FluidProperties props;
  double c_k = 0.1; // k(T) = k_s (1 + c_k T)
  std::vector<double> collocation;
  double boundary_weight = 1.0;

  // Network input template: the residual coordinate goes into slot coord_dim,
  // every other slot keeps its anchor value.
  std::size_t coord_dim = 0;
  std::vector<double> anchor = {0.0};

  // Central differences (step fd_step) instead of exact tangents; for cross-checks only.
  bool finite_difference = false;
  double fd_step = 1e-4;

  // Closed-form solution when one is known.
  std::optional<Field> exact;

  double length() const noexcept { return b - a; }
  double peclet() const noexcept { return props.rho * props.cp * props.u_adv * length() / props.k_f; }

  void validate() const {
    if (!(a < b)) throw UsageError("problem domain needs a < b");
    if (collocation.empty()) throw DataError("collocation set is empty");
    for (double x : collocation)
      if (x < a || x > b) throw DataError("collocation point outside problem domain");
    if (!(boundary_weight >= 0)) throw UsageError("boundary_weight must be >= 0");
    if (coord_dim >= anchor.size()) throw UsageError("coord_dim outside anchor vector");
    props.validate();
  }
};

inline std::string to_string(ProblemKind k) {
  switch (k) {
  case ProblemKind::Conduction1D: return "conduction1d";
  case ProblemKind::ConductionVarK1D: return "conduction-vark1d";
  case ProblemKind::ConvDiff1D: return "convdiff1d";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Collocation

enum class CollocationScheme { UniformRandom, EquiSpaced };

inline std::vector<double> sample_collocation(double a, double b, std::size_t n, CollocationScheme scheme,
                                              std::uint64_t seed) {
  if (n == 0) throw UsageError("collocation count must be >= 1");
  if (!(a < b)) throw UsageError("collocation domain needs a < b");
  std::vector<double> xs(n);
  if (scheme == CollocationScheme::EquiSpaced) {
    if (n == 1) return {0.5 * (a + b)};
    for (std::size_t j = 0; j < n; ++j) xs[j] = a + (b - a) * static_cast<double>(j) / static_cast<double>(n - 1);
    xs.back() = b;
    return xs;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(a, b);
  for (auto &x : xs) x = std::clamp(dist(rng), a, b);
  return xs;
}

// ---------------------------------------------------------------------------
// Residuals

/// R(x) from the field's (T, T', T'') at x.
template <class T> T residual_from(const PdeProblem &p, const ad::Taylor2<T> &u, double x) {
  const double f = p.source(x);
  switch (p.kind) {
  case ProblemKind::Conduction1D:
    return p.props.k_s * u.d2 + f;
  case ProblemKind::ConductionVarK1D: {
    // d/dx (k(T) T') = k'(T) T'^2 + k(T) T''
    const double dk = p.props.k_s * p.c_k;
    const T k = p.props.k_s * (1.0 + p.c_k * u.v);
    return dk * (u.d1 * u.d1) + k * u.d2 + f;
  }
  case ProblemKind::ConvDiff1D:
    return p.props.rho * p.props.cp * p.props.u_adv * u.d1 - p.props.k_f * u.d2 - f;
  }
  throw std::logic_error("unknown problem kind");
}

namespace detail {

inline void check_in_domain(const PdeProblem &p, double x) {
  if (x < p.a || x > p.b) throw DataError("residual requested outside problem domain");
}

template <class P>
ad::Taylor2<P> network_field(const PdeProblem &p, const ArchSpec &arch, std::span<const P> params,
                             const OutputScaling &out, double x) {
  std::vector<double> in = p.anchor;
  in[p.coord_dim] = x;
  if (!p.finite_difference) return forward_taylor<P>(arch, params, in, p.coord_dim, out);
  const double h = p.fd_step;
  const P u0 = forward<P>(arch, params, in, out);
  in[p.coord_dim] = x + h;
  const P up = forward<P>(arch, params, in, out);
  in[p.coord_dim] = x - h;
  const P um = forward<P>(arch, params, in, out);
  return {u0, (up - um) / (2.0 * h), (up - 2.0 * u0 + um) / (h * h)};
}

template <class P>
P network_value(const PdeProblem &p, const ArchSpec &arch, std::span<const P> params, const OutputScaling &out,
                double x) {
  std::vector<double> in = p.anchor;
  in[p.coord_dim] = x;
  return forward<P>(arch, params, in, out);
}

} // namespace detail

inline double residual(const PdeProblem &p, const Mlp &net, double x) {
  detail::check_in_domain(p, x);
  return residual_from(p, detail::network_field<double>(p, net.arch, net.params, net.output, x), x);
}

inline std::vector<double> residuals(const PdeProblem &p, const Mlp &net) {
  std::vector<double> r;
  r.reserve(p.collocation.size());
  for (double x : p.collocation) r.push_back(residual(p, net, x));
  return r;
}

/// weight * ((u(a) - T_a)^2 + (u(b) - T_b)^2)
template <class P>
P boundary_penalty(const PdeProblem &p, const ArchSpec &arch, std::span<const P> params, const OutputScaling &out) {
  if (p.boundary_weight == 0.0) return P(0.0);
  const P ea = detail::network_value<P>(p, arch, params, out, p.a) - p.t_a;
  const P eb = detail::network_value<P>(p, arch, params, out, p.b) - p.t_b;
  return p.boundary_weight * (ea * ea + eb * eb);
}

inline double boundary_penalty(const PdeProblem &p, const Mlp &net) {
  return boundary_penalty<double>(p, net.arch, net.params, net.output);
}

/// Mean squared residual over the collocation set plus the boundary penalty.
template <class P>
P physics_loss(const PdeProblem &p, const ArchSpec &arch, std::span<const P> params, const OutputScaling &out) {
  if (p.collocation.empty()) throw DataError("collocation set is empty");
  P sum(0.0);
  for (double x : p.collocation) {
    const P r = residual_from(p, detail::network_field<P>(p, arch, params, out, x), x);
    sum += r * r;
  }
  return sum / static_cast<double>(p.collocation.size()) + boundary_penalty<P>(p, arch, params, out);
}

inline double physics_loss(const PdeProblem &p, const Mlp &net) {
  return physics_loss<double>(p, net.arch, net.params, net.output);
}

/// Physics loss of an arbitrary field, e.g. a closed-form solution.
inline double physics_loss(const PdeProblem &p, const Field &field) {
  if (p.collocation.empty()) throw DataError("collocation set is empty");
  double sum = 0.0;
  for (double x : p.collocation) {
    ad::Taylor2<double> u = field(x);
    if (p.finite_difference) {
      const double h = p.fd_step;
      const double up = field(x + h).v, um = field(x - h).v;
      u = {u.v, (up - um) / (2 * h), (up - 2 * u.v + um) / (h * h)};
    }
    const double r = residual_from(p, u, x);
    sum += r * r;
  }
  double bp = 0.0;
  if (p.boundary_weight != 0.0) {
    const double ea = field(p.a).v - p.t_a, eb = field(p.b).v - p.t_b;
    bp = p.boundary_weight * (ea * ea + eb * eb);
  }
  return sum / static_cast<double>(p.collocation.size()) + bp;
}

// ---------------------------------------------------------------------------
// Presets with closed-form solutions

struct ProblemOptions {
  FluidProperties props;
  double a = 0.0;
  double b = 1.0;
  double t_a = std::numeric_limits<double>::quiet_NaN(); // NaN -> preset default
  double t_b = std::numeric_limits<double>::quiet_NaN();
  double c_k = 0.1;
  std::size_t n_collocation = 64;
  CollocationScheme scheme = CollocationScheme::UniformRandom;
  double boundary_weight = 1.0;
  std::uint64_t seed = 0;
};

/// k_s T'' + k_s pi^2 sin(pi x) = 0 on [a, b] with T = sin(pi x).
inline PdeProblem conduction_problem(const ProblemOptions &o) {
  PdeProblem p;
  p.name = "conduction1d";
  p.kind = ProblemKind::Conduction1D;
  p.a = o.a;
  p.b = o.b;
  p.props = o.props;
  const double ks = o.props.k_s;
  constexpr double pi = std::numbers::pi;
  p.source = [ks](double x) { return ks * pi * pi * std::sin(pi * x); };
  p.t_a = std::sin(pi * o.a);
  p.t_b = std::sin(pi * o.b);
  p.exact = Field([](double x) {
    const double s = std::sin(pi * x), c = std::cos(pi * x);
    return ad::Taylor2<double>{s, pi * c, -pi * pi * s};
  });
  p.collocation = sample_collocation(o.a, o.b, o.n_collocation, o.scheme, o.seed);
  p.boundary_weight = o.boundary_weight;
  p.validate();
  return p;
}

/// Source-free steady conduction with k(T) = k_s (1 + c_k T); the Kirchhoff
/// transform K(T) = k_s (T + c_k T^2 / 2) is linear in x.
inline PdeProblem conduction_vark_problem(const ProblemOptions &o) {
  PdeProblem p;
  p.name = "conduction-vark1d";
  p.kind = ProblemKind::ConductionVarK1D;
  p.a = o.a;
  p.b = o.b;
  p.props = o.props;
  p.c_k = o.c_k;
  p.t_a = std::isnan(o.t_a) ? 1.0 : o.t_a;
  p.t_b = std::isnan(o.t_b) ? 2.0 : o.t_b;
  const double c = p.c_k, ta = p.t_a, tb = p.t_b, a = p.a, len = p.length();
  if (c == 0.0) {
    const double s = (tb - ta) / len;
    p.exact = Field([=](double x) { return ad::Taylor2<double>{ta + s * (x - a), s, 0.0}; });
  } else {
    const auto kirchhoff = [c](double t) { return t + 0.5 * c * t * t; }; // K / k_s
    const double sa = kirchhoff(ta), slope = (kirchhoff(tb) - sa) / len;
    p.exact = Field([=](double x) {
      const double s = sa + slope * (x - a);
      const double r = std::sqrt(1.0 + 2.0 * c * s);
      return ad::Taylor2<double>{(r - 1.0) / c, slope / r, -c * slope * slope / (r * r * r)};
    });
  }
  p.collocation = sample_collocation(o.a, o.b, o.n_collocation, o.scheme, o.seed);
  p.boundary_weight = o.boundary_weight;
  p.validate();
  return p;
}

/// rho cp u T' = k_f T'' with Dirichlet ends; exact profile
/// T = T_a + (T_b - T_a) (e^{Pe (x-a)/L} - 1) / (e^{Pe} - 1).
inline PdeProblem convdiff_problem(const ProblemOptions &o) {
  PdeProblem p;
  p.name = "convdiff1d";
  p.kind = ProblemKind::ConvDiff1D;
  p.a = o.a;
  p.b = o.b;
  p.props = o.props;
  p.t_a = std::isnan(o.t_a) ? 0.0 : o.t_a;
  p.t_b = std::isnan(o.t_b) ? 1.0 : o.t_b;
  const double pe = p.peclet(), ta = p.t_a, tb = p.t_b, a = p.a, len = p.length();
  const double denom = std::expm1(pe);
  p.exact = Field([=](double x) {
    const double k = pe / len;
    const double e = std::exp(k * (x - a));
    const double amp = (tb - ta) / denom;
    return ad::Taylor2<double>{ta + amp * (e - 1.0), amp * k * e, amp * k * k * e};
  });
  p.collocation = sample_collocation(o.a, o.b, o.n_collocation, o.scheme, o.seed);
  p.boundary_weight = o.boundary_weight;
  p.validate();
  return p;
}

inline PdeProblem make_problem(const std::string &preset, const ProblemOptions &o) {
  if (preset == "conduction1d") return conduction_problem(o);
  if (preset == "conduction-vark1d") return conduction_vark_problem(o);
  if (preset == "convdiff1d") return convdiff_problem(o);
  throw UsageError("unknown problem preset '" + preset + "' (expected conduction1d|conduction-vark1d|convdiff1d)");
}

/// Conduction-form constraint on a Nusselt-number network: along the
/// normalized Peclet input, Nu'' must equal the curvature of the liquid-metal
/// correlation Nu = 5 + 0.025 Pe^0.8, with the correlation's end values as
/// Dirichlet data. Other inputs sit at their normalized mean (0).
inline PdeProblem sodium_profile_problem(const NormStats &norm, std::size_t pe_column, double pe_low, double pe_high,
                                         std::size_t n_collocation, std::uint64_t seed, double boundary_weight = 1.0) {
  if (pe_column >= norm.mean.size()) throw DataError("Peclet column outside normalization stats");
  if (!(0 < pe_low && pe_low < pe_high)) throw DataError("Peclet range must satisfy 0 < low < high");
  const double m = norm.mean[pe_column], s = norm.stddev[pe_column];
  PdeProblem p;
  p.name = "sodium-profile";
  p.kind = ProblemKind::Conduction1D;
  p.a = (pe_low - m) / s;
  p.b = (pe_high - m) / s;
  p.props.k_s = 1.0;
  p.source = [m, s](double x) {
    const double pe = m + s * x;
    return -(0.025 * 0.8 * -0.2 * s * s * std::pow(pe, -1.2));
  };
  p.t_a = sodium_nusselt(pe_low);
  p.t_b = sodium_nusselt(pe_high);
  p.coord_dim = pe_column;
  p.anchor.assign(norm.mean.size(), 0.0);
  p.exact = Field([m, s](double x) {
    const double pe = m + s * x;
    return ad::Taylor2<double>{sodium_nusselt(pe), 0.025 * 0.8 * s * std::pow(pe, -0.2),
                               0.025 * 0.8 * -0.2 * s * s * std::pow(pe, -1.2)};
  });
  p.collocation = sample_collocation(p.a, p.b, n_collocation, CollocationScheme::UniformRandom, seed);
  p.boundary_weight = boundary_weight;
  p.validate();
  return p;
}

} // namespace apinn
