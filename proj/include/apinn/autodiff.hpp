#pragma once
/**
 * @file autodiff.hpp
 * @brief Scalar reverse-mode tape (`Var`) and second-order forward tangents
 * (`Taylor2`). The two compose: `Taylor2<Var>` carries u, u', u'' of a
 * network with respect to one input while every coefficient stays on the
 * tape, so parameter gradients of losses built from input derivatives are exact.
 */

#include "apinn/common.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace apinn::ad {

class Tape;

/// A scalar that is either a constant (no tape) or a node on a Tape.
struct Var {
  Tape *tape = nullptr;
  std::int32_t id = -1;
  double v = 0.0;

  Var() = default;
  Var(double value) : v(value) {} // NOLINT: constants convert implicitly
  Var(Tape *t, std::int32_t i, double value) : tape(t), id(i), v(value) {}

  bool is_constant() const noexcept { return id < 0; }
};

/// Append-only expression graph. Node i owns the edges
/// [end(i-1), end(i)) pointing at earlier nodes, so the graph is acyclic by
/// construction and index order is a topological order.
class Tape {
public:
  void clear() {
    ends_.clear();
    preds_.clear();
    partials_.clear();
  }

  void reserve(std::size_t nodes, std::size_t edges) {
    ends_.reserve(nodes);
    preds_.reserve(edges);
    partials_.reserve(edges);
  }

  std::size_t size() const noexcept { return ends_.size(); }
  std::size_t edge_count() const noexcept { return preds_.size(); }

  Var variable(double value) { return push(value); }

  Var unary(double value, const Var &a, double da) { return push(value, {&a, 1}, {&da, 1}); }

  Var binary(double value, const Var &a, double da, const Var &b, double db) {
    const Var in[2] = {a, b};
    const double d[2] = {da, db};
    return push(value, in, d);
  }

  /// Node with arbitrary fan-in; constant inputs are dropped.
  Var push(double value, std::span<const Var> inputs = {}, std::span<const double> partials = {}) {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (inputs[k].is_constant()) continue;
      preds_.push_back(inputs[k].id);
      partials_.push_back(partials[k]);
    }
    ends_.push_back(static_cast<std::uint32_t>(preds_.size()));
    return Var(this, static_cast<std::int32_t>(ends_.size() - 1), value);
  }

  /// Builds a node from raw (pred, partial) pairs already filtered of constants.
  Var push_edges(double value, std::span<const std::int32_t> preds, std::span<const double> partials) {
    preds_.insert(preds_.end(), preds.begin(), preds.end());
    partials_.insert(partials_.end(), partials.begin(), partials.end());
    ends_.push_back(static_cast<std::uint32_t>(preds_.size()));
    return Var(this, static_cast<std::int32_t>(ends_.size() - 1), value);
  }

  /// Reverse accumulation from `output`; adjoints for every node.
  std::vector<double> adjoints(const Var &output) const {
    std::vector<double> adj(ends_.size(), 0.0);
    if (output.is_constant()) return adj;
    adj[static_cast<std::size_t>(output.id)] = 1.0;
    for (std::int64_t i = output.id; i >= 0; --i) {
      const double g = adj[static_cast<std::size_t>(i)];
      if (g == 0.0) continue;
      const std::uint32_t b = i == 0 ? 0 : ends_[static_cast<std::size_t>(i - 1)];
      const std::uint32_t e = ends_[static_cast<std::size_t>(i)];
      for (std::uint32_t k = b; k < e; ++k) adj[static_cast<std::size_t>(preds_[k])] += partials_[k] * g;
    }
    return adj;
  }

private:
  std::vector<std::uint32_t> ends_;
  std::vector<std::int32_t> preds_;
  std::vector<double> partials_;
};

namespace detail {

inline Tape *pick_tape(const Var &a, const Var &b) {
  if (a.tape && b.tape && a.tape != b.tape) throw std::logic_error("autodiff: operands live on different tapes");
  return a.tape ? a.tape : b.tape;
}

[[noreturn]] inline void fail(const std::string &what, const Var &at) {
  throw NumericalError("autodiff: " + what + (at.is_constant() ? std::string(" (constant operand)")
                                                               : " (operand node " + std::to_string(at.id) + ")"));
}

} // namespace detail

inline double value_of(double x) noexcept { return x; }
inline double value_of(const Var &x) noexcept { return x.v; }

inline Var operator+(const Var &a, const Var &b) {
  if (a.is_constant() && b.is_constant()) return Var(a.v + b.v);
  if (b.is_constant() && b.v == 0.0) return a;
  if (a.is_constant() && a.v == 0.0) return b;
  return detail::pick_tape(a, b)->binary(a.v + b.v, a, 1.0, b, 1.0);
}

inline Var operator-(const Var &a, const Var &b) {
  if (a.is_constant() && b.is_constant()) return Var(a.v - b.v);
  if (b.is_constant() && b.v == 0.0) return a;
  return detail::pick_tape(a, b)->binary(a.v - b.v, a, 1.0, b, -1.0);
}

inline Var operator-(const Var &a) {
  if (a.is_constant()) return Var(-a.v);
  return a.tape->unary(-a.v, a, -1.0);
}

inline Var operator*(const Var &a, const Var &b) {
  if (a.is_constant() && b.is_constant()) return Var(a.v * b.v);
  if ((a.is_constant() && a.v == 0.0) || (b.is_constant() && b.v == 0.0)) return Var(0.0);
  if (a.is_constant() && a.v == 1.0) return b;
  if (b.is_constant() && b.v == 1.0) return a;
  return detail::pick_tape(a, b)->binary(a.v * b.v, a, b.v, b, a.v);
}

inline Var operator/(const Var &a, const Var &b) {
  if (b.v == 0.0) detail::fail("division by zero", b);
  if (a.is_constant() && b.is_constant()) return Var(a.v / b.v);
  if (b.is_constant() && b.v == 1.0) return a;
  const double q = a.v / b.v;
  return detail::pick_tape(a, b)->binary(q, a, 1.0 / b.v, b, -q / b.v);
}

inline Var &operator+=(Var &a, const Var &b) { return a = a + b; }
inline Var &operator-=(Var &a, const Var &b) { return a = a - b; }
inline Var &operator*=(Var &a, const Var &b) { return a = a * b; }
inline Var &operator/=(Var &a, const Var &b) { return a = a / b; }

// Var+double etc. resolve through the implicit constant conversion, but
// spelled out to keep overload resolution unambiguous next to Taylor2.
inline Var operator+(const Var &a, double b) { return a + Var(b); }
inline Var operator+(double a, const Var &b) { return Var(a) + b; }
inline Var operator-(const Var &a, double b) { return a - Var(b); }
inline Var operator-(double a, const Var &b) { return Var(a) - b; }
inline Var operator*(const Var &a, double b) { return a * Var(b); }
inline Var operator*(double a, const Var &b) { return Var(a) * b; }
inline Var operator/(const Var &a, double b) { return a / Var(b); }
inline Var operator/(double a, const Var &b) { return Var(a) / b; }

namespace detail {
inline Var apply_unary(const Var &a, double value, double da) {
  if (a.is_constant()) return Var(value);
  return a.tape->unary(value, a, da);
}
} // namespace detail

inline Var exp(const Var &a) {
  const double e = std::exp(a.v);
  if (!std::isfinite(e)) detail::fail("exp overflow at " + std::to_string(a.v), a);
  return detail::apply_unary(a, e, e);
}

inline Var log(const Var &a) {
  if (!(a.v > 0.0)) detail::fail("log of non-positive value " + std::to_string(a.v), a);
  return detail::apply_unary(a, std::log(a.v), 1.0 / a.v);
}

inline Var tanh(const Var &a) {
  const double t = std::tanh(a.v);
  return detail::apply_unary(a, t, 1.0 - t * t);
}

inline double sigmoid(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var &a) {
  const double s = sigmoid(a.v);
  return detail::apply_unary(a, s, s * (1.0 - s));
}

inline Var sqrt(const Var &a) {
  if (a.v < 0.0) detail::fail("sqrt of negative value " + std::to_string(a.v), a);
  const double r = std::sqrt(a.v);
  if (r == 0.0 && !a.is_constant()) detail::fail("sqrt is not differentiable at 0", a);
  return detail::apply_unary(a, r, r == 0.0 ? 0.0 : 0.5 / r);
}

inline double ipow(double x, int n) {
  if (n < 0) {
    if (x == 0.0) throw NumericalError("autodiff: negative power of zero");
    return 1.0 / ipow(x, -n);
  }
  double r = 1.0;
  for (int k = 0; k < n; ++k) r *= x;
  return r;
}

inline Var pow(const Var &a, int n) {
  if (n == 0) return Var(1.0);
  if (n == 1) return a;
  if (n < 0 && a.v == 0.0) detail::fail("negative integer power of zero", a);
  return detail::apply_unary(a, ipow(a.v, n), n * ipow(a.v, n - 1));
}

inline double sqr(double x) noexcept { return x * x; }
inline Var sqr(const Var &a) { return a * a; }

/// w . h + bias as a single node.
inline double dot(std::span<const double> w, std::span<const double> h, double bias) {
  double s = bias;
  for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * h[k];
  return s;
}

inline Var dot(std::span<const Var> w, std::span<const double> h, const Var &bias) {
  Tape *tape = bias.tape;
  double s = bias.v;
  for (std::size_t k = 0; k < w.size(); ++k) {
    s += w[k].v * h[k];
    if (!tape) tape = w[k].tape;
  }
  if (!tape) return Var(s);
  thread_local std::vector<std::int32_t> preds;
  thread_local std::vector<double> parts;
  preds.clear();
  parts.clear();
  for (std::size_t k = 0; k < w.size(); ++k)
    if (!w[k].is_constant() && h[k] != 0.0) {
      preds.push_back(w[k].id);
      parts.push_back(h[k]);
    }
  if (!bias.is_constant()) {
    preds.push_back(bias.id);
    parts.push_back(1.0);
  }
  return tape->push_edges(s, preds, parts);
}

inline Var dot(std::span<const Var> w, std::span<const Var> h, const Var &bias) {
  Tape *tape = bias.tape;
  double s = bias.v;
  for (std::size_t k = 0; k < w.size(); ++k) {
    s += w[k].v * h[k].v;
    if (!tape) tape = w[k].tape ? w[k].tape : h[k].tape;
  }
  if (!tape) return Var(s);
  thread_local std::vector<std::int32_t> preds;
  thread_local std::vector<double> parts;
  preds.clear();
  parts.clear();
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (!w[k].is_constant() && h[k].v != 0.0) {
      preds.push_back(w[k].id);
      parts.push_back(h[k].v);
    }
    if (!h[k].is_constant() && w[k].v != 0.0) {
      preds.push_back(h[k].id);
      parts.push_back(w[k].v);
    }
  }
  if (!bias.is_constant()) {
    preds.push_back(bias.id);
    parts.push_back(1.0);
  }
  return tape->push_edges(s, preds, parts);
}

// ---------------------------------------------------------------------------
// Second-order forward tangents

/// Truncated Taylor triple (f, f', f'') along one input direction.
template <class T> struct Taylor2 {
  T v{};
  T d1{};
  T d2{};

  static Taylor2 constant(T value) { return {value, T(0.0), T(0.0)}; }
  static Taylor2 variable(T value) { return {value, T(1.0), T(0.0)}; }
};

namespace detail {
// g(u) with g0 = g(u.v), g1 = g'(u.v), g2 = g''(u.v)
template <class T> Taylor2<T> chain(const Taylor2<T> &u, const T &g0, const T &g1, const T &g2) {
  return {g0, g1 * u.d1, g2 * u.d1 * u.d1 + g1 * u.d2};
}
} // namespace detail

template <class T> Taylor2<T> operator+(const Taylor2<T> &a, const Taylor2<T> &b) {
  return {a.v + b.v, a.d1 + b.d1, a.d2 + b.d2};
}
template <class T> Taylor2<T> operator-(const Taylor2<T> &a, const Taylor2<T> &b) {
  return {a.v - b.v, a.d1 - b.d1, a.d2 - b.d2};
}
template <class T> Taylor2<T> operator-(const Taylor2<T> &a) { return {-a.v, -a.d1, -a.d2}; }
template <class T> Taylor2<T> operator*(const Taylor2<T> &a, const Taylor2<T> &b) {
  return {a.v * b.v, a.v * b.d1 + a.d1 * b.v, a.v * b.d2 + 2.0 * (a.d1 * b.d1) + a.d2 * b.v};
}
template <class T> Taylor2<T> operator/(const Taylor2<T> &a, const Taylor2<T> &b) {
  if (value_of(b.v) == 0.0) throw NumericalError("autodiff: division by zero in tangent propagation");
  const T inv = 1.0 / b.v;
  const Taylor2<T> r = detail::chain(b, inv, -(inv * inv), 2.0 * (inv * inv * inv));
  return a * r;
}

// scalar (tangent-free) operands
template <class T> Taylor2<T> operator+(const Taylor2<T> &a, const T &s) { return {a.v + s, a.d1, a.d2}; }
template <class T> Taylor2<T> operator+(const T &s, const Taylor2<T> &a) { return {s + a.v, a.d1, a.d2}; }
template <class T> Taylor2<T> operator-(const Taylor2<T> &a, const T &s) { return {a.v - s, a.d1, a.d2}; }
template <class T> Taylor2<T> operator-(const T &s, const Taylor2<T> &a) { return {s - a.v, -a.d1, -a.d2}; }
template <class T> Taylor2<T> operator*(const Taylor2<T> &a, const T &s) { return {a.v * s, a.d1 * s, a.d2 * s}; }
template <class T> Taylor2<T> operator*(const T &s, const Taylor2<T> &a) { return {s * a.v, s * a.d1, s * a.d2}; }
template <class T> Taylor2<T> operator/(const Taylor2<T> &a, const T &s) { return {a.v / s, a.d1 / s, a.d2 / s}; }

inline Taylor2<Var> operator*(const Taylor2<Var> &a, double s) { return a * Var(s); }
inline Taylor2<Var> operator*(double s, const Taylor2<Var> &a) { return Var(s) * a; }
inline Taylor2<Var> operator+(const Taylor2<Var> &a, double s) { return a + Var(s); }
inline Taylor2<Var> operator-(const Taylor2<Var> &a, double s) { return a - Var(s); }

template <class T> Taylor2<T> exp(const Taylor2<T> &u) {
  using std::exp;
  const T e = exp(u.v);
  return detail::chain(u, e, e, e);
}

template <class T> Taylor2<T> log(const Taylor2<T> &u) {
  using std::log;
  if (!(value_of(u.v) > 0.0)) throw NumericalError("autodiff: log of non-positive value in tangent propagation");
  const T inv = 1.0 / u.v;
  return detail::chain(u, log(u.v), inv, -(inv * inv));
}

template <class T> Taylor2<T> tanh(const Taylor2<T> &u) {
  using std::tanh;
  const T t = tanh(u.v);
  const T g1 = 1.0 - t * t;
  return detail::chain(u, t, g1, -2.0 * (t * g1));
}

template <class T> Taylor2<T> sigmoid(const Taylor2<T> &u) {
  const T s = sigmoid(u.v);
  const T g1 = s * (1.0 - s);
  return detail::chain(u, s, g1, g1 * (1.0 - 2.0 * s));
}

template <class T> Taylor2<T> sqrt(const Taylor2<T> &u) {
  using std::sqrt;
  if (!(value_of(u.v) > 0.0)) throw NumericalError("autodiff: sqrt needs a positive argument in tangent propagation");
  const T r = sqrt(u.v);
  const T g1 = 0.5 / r;
  return detail::chain(u, r, g1, -0.5 * (g1 / u.v));
}

inline double pow(double x, int n) { return ipow(x, n); }

template <class T> Taylor2<T> pow(const Taylor2<T> &u, int n) {
  if (n == 0) return Taylor2<T>::constant(T(1.0));
  if (n == 1) return u;
  const T g0 = pow(u.v, n);
  const T g1 = static_cast<double>(n) * pow(u.v, n - 1);
  const T g2 = static_cast<double>(n) * static_cast<double>(n - 1) * pow(u.v, n - 2);
  return detail::chain(u, g0, g1, g2);
}


// ---------------------------------------------------------------------------
// Parameter layout

/// One dense layer's slice of a flat parameter vector: a row-major
/// fan_out x fan_in weight block followed by fan_out biases.
struct LayerBlock {
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  std::size_t offset = 0;

  std::size_t weight_count() const noexcept { return fan_in * fan_out; }
  std::size_t bias_offset() const noexcept { return offset + weight_count(); }
  std::size_t size() const noexcept { return weight_count() + fan_out; }
  std::size_t end() const noexcept { return offset + size(); }
};

/// Flat parameter vector theta with its layout; the optional blending scalar
/// occupies the slot right after the last layer.
struct ParamVector {
  std::vector<LayerBlock> layers;
  bool has_alpha = false;
  std::vector<double> values;

  std::size_t layer_param_count() const noexcept { return layers.empty() ? 0 : layers.back().end(); }
  std::size_t expected_size() const noexcept { return layer_param_count() + (has_alpha ? 1 : 0); }
  std::size_t alpha_slot() const {
    if (!has_alpha) throw std::logic_error("parameter vector has no blending slot");
    return layer_param_count();
  }
  bool consistent() const noexcept { return values.size() == expected_size(); }
};

// ---------------------------------------------------------------------------
// Entry points

struct GradResult {
  double value = 0.0;
  std::vector<double> grad;
};

inline Tape &thread_tape() {
  thread_local Tape tape;
  return tape;
}

/// Value and d f / d theta of `f(span<const Var>) -> Var` at `theta`.
template <class F> GradResult gradient(std::span<const double> theta, F &&f) {
  Tape &tape = thread_tape();
  tape.clear();
  std::vector<Var> params;
  params.reserve(theta.size());
  for (double t : theta) params.push_back(tape.variable(t));
  const Var out = f(std::span<const Var>(params));
  GradResult r;
  r.value = out.v;
  r.grad.assign(theta.size(), 0.0);
  if (!out.is_constant()) {
    const auto adj = tape.adjoints(out);
    for (std::size_t k = 0; k < theta.size(); ++k) r.grad[k] = adj[static_cast<std::size_t>(params[k].id)];
  }
  tape.clear();
  return r;
}

/// (f(x), f'(x), f''(x)) for `f(Taylor2<double>) -> Taylor2<double>`.
template <class F> std::array<double, 3> input_derivs(F &&f, double x) {
  const Taylor2<double> r = f(Taylor2<double>::variable(x));
  return {r.v, r.d1, r.d2};
}

/// Central-difference gradient, used as an independent check.
template <class F> std::vector<double> finite_difference_gradient(std::span<const double> theta, F &&f, double h = 1e-5) {
  std::vector<double> t(theta.begin(), theta.end()), g(theta.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double orig = t[k];
    t[k] = orig + h;
    const double fp = f(std::span<const double>(t));
    t[k] = orig - h;
    const double fm = f(std::span<const double>(t));
    t[k] = orig;
    g[k] = (fp - fm) / (2.0 * h);
  }
  return g;
}

} // namespace apinn::ad
