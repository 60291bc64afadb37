#pragma once
/**
 * @file kernels.hpp
 * @brief RBF-kernel baselines: Gaussian-process regression (Cholesky
 * posterior) and epsilon-SVR trained with SMO.
 */

#include "apinn/common.hpp"
#include "apinn/data_io.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace apinn {

/// k(x, x') = exp(-gamma |x - x'|^2)
struct RbfKernel {
  double gamma = 1.0;

  double operator()(std::span<const double> a, std::span<const double> b) const {
    if (a.size() != b.size())
      throw DataError("rbf: dimension mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    double d2 = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) d2 += (a[k] - b[k]) * (a[k] - b[k]);
    return std::exp(-gamma * d2);
  }
};

inline double rbf(std::span<const double> a, std::span<const double> b, double gamma) { return RbfKernel{gamma}(a, b); }

namespace detail {
inline Eigen::MatrixXd gram(const Dataset &ds, const RbfKernel &k) {
  const auto n = static_cast<Eigen::Index>(ds.rows());
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    K(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) K(i, j) = K(j, i) = k(ds.row(static_cast<std::size_t>(i)), ds.row(static_cast<std::size_t>(j)));
  }
  return K;
}
} // namespace detail

// ---------------------------------------------------------------------------
// Gaussian process

struct GpOptions {
  bool standardize = true; // zero-mean prior on standardized targets
  double jitter_start = 1e-10;
  double jitter_max = 1e-4;
};

struct GpModel {
  RbfKernel kernel;
  double noise = 0.0; // variance added to the diagonal
  double jitter = 0.0;
  Dataset train;
  Eigen::MatrixXd chol_l; // lower Cholesky factor of K + (noise + jitter) I
  Eigen::VectorXd weights; // (K + sigma^2 I)^-1 y_std
  double y_shift = 0.0;
  double y_scale = 1.0;
  double log_marginal_likelihood = 0.0; // in standardized units
};

struct GpPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

inline GpModel gp_fit(const Dataset &ds, double gamma, double noise, const GpOptions &opt = {}) {
  if (ds.rows() == 0) throw DataError("gp_fit: empty dataset");
  if (!(gamma > 0)) throw UsageError("gp_fit: gamma must be > 0");
  if (!(noise >= 0)) throw UsageError("gp_fit: noise must be >= 0");
  GpModel m;
  m.kernel = {gamma};
  m.noise = noise;
  m.train = ds;
  const auto n = static_cast<Eigen::Index>(ds.rows());
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ds.y.data(), n);
  if (opt.standardize) {
    m.y_shift = y.mean();
    const double sd = std::sqrt((y.array() - m.y_shift).square().mean());
    m.y_scale = sd > 0 ? sd : 1.0;
    y = (y.array() - m.y_shift) / m.y_scale;
  }
  const Eigen::MatrixXd K = detail::gram(ds, m.kernel);
  double jitter = noise > 0 ? 0.0 : opt.jitter_start;
  double fit_term = 0.0; // y' (K + sigma^2 I)^-1 y of the factorized system
  for (;;) {
    Eigen::MatrixXd A = K;
    A.diagonal().array() += noise + jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() == Eigen::Success) {
      m.chol_l = llt.matrixL();
      m.weights = llt.solve(y);
      m.jitter = jitter;
      fit_term = y.dot(m.weights);
      if (noise == 0.0 && jitter > 0.0) {
        // Iterative refinement against the unjittered system so zero-noise fits interpolate.
        for (int it = 0; it < 20; ++it) {
          const Eigen::VectorXd r = y - K * m.weights;
          if (r.lpNorm<Eigen::Infinity>() <= 1e-12 * std::max(1.0, y.lpNorm<Eigen::Infinity>())) break;
          m.weights += llt.solve(r);
        }
      }
      break;
    }
    jitter = jitter == 0.0 ? opt.jitter_start : jitter * 10.0;
    if (jitter > opt.jitter_max * (1 + 1e-9))
      throw NumericalError("gp_fit: Cholesky failed up to jitter " + detail::format_real(opt.jitter_max));
  }
  m.log_marginal_likelihood = -0.5 * fit_term - m.chol_l.diagonal().array().log().sum() -
                              0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  return m;
}

inline GpPrediction gp_predict(const GpModel &m, std::span<const double> x) {
  const auto n = static_cast<Eigen::Index>(m.train.rows());
  Eigen::VectorXd ks(n);
  for (Eigen::Index i = 0; i < n; ++i) ks(i) = m.kernel(m.train.row(static_cast<std::size_t>(i)), x);
  const double mean_std = ks.dot(m.weights);
  const Eigen::VectorXd v = m.chol_l.triangularView<Eigen::Lower>().solve(ks);
  const double var_std = std::max(0.0, 1.0 - v.squaredNorm());
  return {m.y_shift + m.y_scale * mean_std, m.y_scale * m.y_scale * var_std};
}

// ---------------------------------------------------------------------------
// epsilon-SVR

struct SvrOptions {
  double tolerance = 1e-4;    // stop when the maximal KKT violation falls below this
  std::size_t max_iter = 0;   // 0 -> 100 * N
};

struct SvrModel {
  RbfKernel kernel;
  double C = 1.0;
  double epsilon = 0.1;
  std::vector<double> dual;       // alpha_i - alpha_i* for every training point
  double bias = 0.0;
  Dataset train;
  std::size_t iterations = 0;
  double kkt_violation = 0.0;
  std::vector<double> alpha;      // the 2N box variables: alpha (first N), alpha* (last N)

  std::size_t support_vector_count() const {
    std::size_t c = 0;
    for (double d : dual)
      if (d != 0.0) ++c;
    return c;
  }
};

/// Dual objective (to be maximized) for 2N variables beta = (alpha, alpha*):
/// -1/2 sum (a_i - a*_i)(a_j - a*_j) K_ij - eps sum (a_i + a*_i) + sum y_i (a_i - a*_i)
inline double svr_dual_objective(const Eigen::MatrixXd &K, std::span<const double> y, std::span<const double> beta,
                                 double epsilon) {
  const auto n = static_cast<Eigen::Index>(y.size());
  Eigen::VectorXd d(n);
  double lin = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = beta[static_cast<std::size_t>(i)], as = beta[static_cast<std::size_t>(i + n)];
    d(i) = a - as;
    lin += -epsilon * (a + as) + y[static_cast<std::size_t>(i)] * (a - as);
  }
  return -0.5 * d.dot(K * d) + lin;
}

inline Eigen::MatrixXd kernel_matrix(const Dataset &ds, double gamma) { return detail::gram(ds, RbfKernel{gamma}); }

/// SMO on the 2N-variable dual with maximal-violating-pair working sets.
inline SvrModel svr_fit(const Dataset &ds, double C, double gamma, double epsilon, const SvrOptions &opt = {}) {
  if (ds.rows() == 0) throw DataError("svr_fit: empty dataset");
  if (!(C > 0)) throw UsageError("svr_fit: C must be > 0");
  if (!(gamma > 0)) throw UsageError("svr_fit: gamma must be > 0");
  if (!(epsilon >= 0)) throw UsageError("svr_fit: epsilon must be >= 0");
  const std::size_t n = ds.rows(), l = 2 * n;
  const Eigen::MatrixXd K = detail::gram(ds, RbfKernel{gamma});
  std::vector<double> yv(l), p(l), beta(l, 0.0), G(l);
  for (std::size_t i = 0; i < n; ++i) {
    yv[i] = 1.0;
    yv[i + n] = -1.0;
    p[i] = epsilon - ds.y[i];
    p[i + n] = epsilon + ds.y[i];
  }
  G = p;
  const auto Q = [&](std::size_t i, std::size_t j) {
    return yv[i] * yv[j] * K(static_cast<Eigen::Index>(i % n), static_cast<Eigen::Index>(j % n));
  };
  const auto upper = [&](std::size_t t) { return beta[t] >= C; };
  const auto lower = [&](std::size_t t) { return beta[t] <= 0.0; };
  const auto in_up = [&](std::size_t t) { return yv[t] > 0 ? !upper(t) : !lower(t); };
  const auto in_low = [&](std::size_t t) { return yv[t] > 0 ? !lower(t) : !upper(t); };
  constexpr double tau = 1e-12;
  const std::size_t max_iter = opt.max_iter ? opt.max_iter : 100 * n;

  SvrModel m;
  m.kernel = {gamma};
  m.C = C;
  m.epsilon = epsilon;
  m.train = ds;
  std::size_t iter = 0;
  double violation = 0.0;
  for (;; ++iter) {
    double gmax = -std::numeric_limits<double>::infinity(), gmin = std::numeric_limits<double>::infinity();
    std::size_t i = l, j = l;
    for (std::size_t t = 0; t < l; ++t) {
      const double v = -yv[t] * G[t];
      if (in_up(t) && v > gmax) {
        gmax = v;
        i = t;
      }
      if (in_low(t) && v < gmin) {
        gmin = v;
        j = t;
      }
    }
    violation = (i == l || j == l) ? 0.0 : gmax - gmin;
    if (violation < opt.tolerance) break;
    if (iter >= max_iter)
      throw NumericalError("svr_fit: no convergence after " + std::to_string(max_iter) +
                           " iterations (KKT violation " + detail::format_real(violation) + ")");

    const double old_i = beta[i], old_j = beta[j];
    if (yv[i] != yv[j]) {
      double quad = Q(i, i) + Q(j, j) + 2.0 * Q(i, j);
      if (quad <= 0) quad = tau;
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = beta[i] - beta[j];
      beta[i] += delta;
      beta[j] += delta;
      if (diff > 0) {
        if (beta[j] < 0) {
          beta[j] = 0;
          beta[i] = diff;
        }
      } else if (beta[i] < 0) {
        beta[i] = 0;
        beta[j] = -diff;
      }
      if (diff > 0) {
        if (beta[i] > C) {
          beta[i] = C;
          beta[j] = C - diff;
        }
      } else if (beta[j] > C) {
        beta[j] = C;
        beta[i] = C + diff;
      }
    } else {
      double quad = Q(i, i) + Q(j, j) - 2.0 * Q(i, j);
      if (quad <= 0) quad = tau;
      const double delta = (G[i] - G[j]) / quad;
      const double sum = beta[i] + beta[j];
      beta[i] -= delta;
      beta[j] += delta;
      if (sum > C) {
        if (beta[i] > C) {
          beta[i] = C;
          beta[j] = sum - C;
        }
      } else if (beta[j] < 0) {
        beta[j] = 0;
        beta[i] = sum;
      }
      if (sum > C) {
        if (beta[j] > C) {
          beta[j] = C;
          beta[i] = sum - C;
        }
      } else if (beta[i] < 0) {
        beta[i] = 0;
        beta[j] = sum;
      }
    }
    const double di = beta[i] - old_i, dj = beta[j] - old_j;
    for (std::size_t t = 0; t < l; ++t) G[t] += Q(t, i) * di + Q(t, j) * dj;
  }

  // bias from free variables, else midpoint of the feasible interval
  double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity(), sum_free = 0.0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < l; ++t) {
    const double yg = yv[t] * G[t];
    if (upper(t)) {
      if (yv[t] < 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (yv[t] > 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : 0.5 * (ub + lb);
  m.bias = -rho;
  m.dual.resize(n);
  for (std::size_t k = 0; k < n; ++k) m.dual[k] = beta[k] - beta[k + n];
  m.alpha = beta;
  m.iterations = iter;
  m.kkt_violation = violation;
  return m;
}

inline double svr_predict(const SvrModel &m, std::span<const double> x) {
  double s = m.bias;
  for (std::size_t k = 0; k < m.dual.size(); ++k)
    if (m.dual[k] != 0.0) s += m.dual[k] * m.kernel(m.train.row(k), x);
  return s;
}

} // namespace apinn
