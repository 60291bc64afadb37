#pragma once
/**
 * @file blending.hpp
 * @brief Learnable blending neuron and the composite PINN objective
 * L = lambda_d * L_data + lambda_p * L_physics with lambda_d = sigmoid(alpha),
 * lambda_p = 1 - sigmoid(alpha).
 */

#include "apinn/autodiff.hpp"
#include "apinn/data_io.hpp"
#include "apinn/mlp.hpp"
#include "apinn/physics.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace apinn {

struct BlendingNeuron {
  double alpha = 0.0;
};

struct BlendWeights {
  double lambda_d = 0.5;
  double lambda_p = 0.5;
};

struct LossBreakdown {
  double data_loss = 0.0;
  double physics_loss = 0.0;
  BlendWeights weights;
  double total = 0.0;
};

inline BlendWeights blend_weights(double alpha) {
  if (!std::isfinite(alpha)) throw NumericalError("blending alpha is not finite");
  const double d = ad::sigmoid(alpha);
  return {d, 1.0 - d};
}

template <class P> struct BlendWeightsT {
  P lambda_d;
  P lambda_p;
};

template <class P> BlendWeightsT<P> blend_weights(const P &alpha) {
  using ad::sigmoid;
  const P d = sigmoid(alpha);
  return {d, 1.0 - d};
}

/// (1/N) sum (y_hat - y)^2
template <class P>
P data_loss(const ArchSpec &arch, std::span<const P> params, const OutputScaling &out, const Dataset &ds) {
  if (ds.rows() == 0) throw DataError("data loss over an empty dataset");
  P sum(0.0);
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    const P e = forward<P>(arch, params, ds.row(i), out) - ds.y[i];
    sum += e * e;
  }
  return sum / static_cast<double>(ds.rows());
}

inline double data_loss(const Mlp &net, const Dataset &ds) {
  return data_loss<double>(net.arch, net.params, net.output, ds);
}

inline LossBreakdown combine(double data, double physics, const BlendWeights &w) {
  return {data, physics, w, w.lambda_d * data + w.lambda_p * physics};
}

inline LossBreakdown composite_loss(const Mlp &net, const Dataset &ds, const PdeProblem &prob,
                                    const BlendingNeuron &neuron) {
  return combine(data_loss(net, ds), physics_loss(prob, net), blend_weights(neuron.alpha));
}

/// Which terms feed the gradient. Both is the joint objective; the other two
/// back-propagate only lambda_d L_data or lambda_p L_physics (alternating schedule).
enum class LossTerms { Both, DataOnly, PhysicsOnly };

struct LossEval {
  LossBreakdown breakdown;
  std::vector<double> grad; // d/d theta, then d/d alpha when present
};

inline LossEval data_loss_grad(const Mlp &net, const Dataset &ds) {
  const auto r = ad::gradient(net.params, [&](std::span<const ad::Var> p) {
    return data_loss<ad::Var>(net.arch, p, net.output, ds);
  });
  LossEval e;
  e.breakdown = {r.value, 0.0, {1.0, 0.0}, r.value};
  e.grad = r.grad;
  return e;
}

inline LossEval composite_loss_grad(const Mlp &net, double alpha, const Dataset &ds, const PdeProblem &prob,
                                    LossTerms terms = LossTerms::Both) {
  std::vector<double> theta = net.params;
  theta.push_back(alpha);
  double ld = 0, lp = 0;
  const auto r = ad::gradient(theta, [&](std::span<const ad::Var> p) {
    const ad::Var d = data_loss<ad::Var>(net.arch, p, net.output, ds);
    const ad::Var ph = physics_loss<ad::Var>(prob, net.arch, p, net.output);
    const auto w = blend_weights<ad::Var>(p.back());
    ld = d.v;
    lp = ph.v;
    switch (terms) {
    case LossTerms::DataOnly: return w.lambda_d * d;
    case LossTerms::PhysicsOnly: return w.lambda_p * ph;
    case LossTerms::Both: break;
    }
    return w.lambda_d * d + w.lambda_p * ph;
  });
  LossEval e;
  e.breakdown = combine(ld, lp, blend_weights(alpha));
  e.grad = r.grad;
  return e;
}

} // namespace apinn
