#include "apinn/autodiff.hpp"
#include "apinn/mlp.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace apinn;
using ad::Taylor2;
using ad::Var;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

} // namespace

TEST(Tape, ElementaryGradients) {
  const std::vector<double> theta = {0.7, -1.3};
  const auto r = ad::gradient(theta, [](std::span<const Var> p) { return p[0] * p[1] + ad::exp(p[0]) / (1.0 + p[1] * p[1]); });
  const double x = 0.7, y = -1.3;
  EXPECT_NEAR(r.value, x * y + std::exp(x) / (1 + y * y), 1e-14);
  EXPECT_NEAR(r.grad[0], y + std::exp(x) / (1 + y * y), 1e-13);
  EXPECT_NEAR(r.grad[1], x - std::exp(x) * 2 * y / ((1 + y * y) * (1 + y * y)), 1e-13);
}

TEST(Tape, SharedSubexpressionAccumulates) {
  const std::vector<double> theta = {1.5};
  const auto r = ad::gradient(theta, [](std::span<const Var> p) {
    const Var s = ad::tanh(p[0]);
    return s * s + s;
  });
  const double t = std::tanh(1.5), dt = 1 - t * t;
  EXPECT_NEAR(r.grad[0], (2 * t + 1) * dt, 1e-14);
}

TEST(Tape, ConstantOutputHasZeroGradient) {
  const std::vector<double> theta = {2.0, 3.0};
  const auto r = ad::gradient(theta, [](std::span<const Var>) { return Var(5.0); });
  EXPECT_EQ(r.value, 5.0);
  EXPECT_EQ(r.grad, (std::vector<double>{0.0, 0.0}));
}

TEST(Tape, DomainErrorsAreNumerical) {
  const std::vector<double> theta = {0.0, -1.0};
  EXPECT_THROW(ad::gradient(theta, [](std::span<const Var> p) { return 1.0 / p[0]; }), NumericalError);
  EXPECT_THROW(ad::gradient(theta, [](std::span<const Var> p) { return ad::log(p[1]); }), NumericalError);
  EXPECT_THROW(ad::gradient(theta, [](std::span<const Var> p) { return ad::sqrt(p[1]); }), NumericalError);
  EXPECT_THROW(ad::gradient(theta, [](std::span<const Var> p) { return ad::exp(p[0] + 1000.0); }), NumericalError);
}

TEST(Tape, RepeatedEvaluationIsBitIdentical) {
  const auto net = init_mlp(ArchSpec::parse("3-[7,5]-1"), 4);
  const std::vector<double> x = {0.1, -0.4, 0.9};
  const auto f = [&](std::span<const Var> p) { return forward<Var>(net.arch, p, x); };
  const auto a = ad::gradient(net.params, f), b = ad::gradient(net.params, f);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.grad, b.grad);
}

TEST(Taylor2, ProductAndChainRule) {
  // f(x) = x^3 e^x: f' = (x^3 + 3x^2) e^x, f'' = (x^3 + 6x^2 + 6x) e^x
  const double x = 0.8;
  const auto d = ad::input_derivs([](Taylor2<double> u) { return ad::pow(u, 3) * ad::exp(u); }, x);
  EXPECT_NEAR(d[0], x * x * x * std::exp(x), 1e-14);
  EXPECT_NEAR(d[1], (x * x * x + 3 * x * x) * std::exp(x), 1e-13);
  EXPECT_NEAR(d[2], (x * x * x + 6 * x * x + 6 * x) * std::exp(x), 1e-13);
}

TEST(Taylor2, SumRuleLinearity) {
  const double x = -0.3;
  const auto f = [](Taylor2<double> u) { return ad::tanh(u); };
  const auto g = [](Taylor2<double> u) { return ad::sigmoid(u) * 2.0; };
  const auto s = ad::input_derivs([&](Taylor2<double> u) { return f(u) + g(u); }, x);
  const auto a = ad::input_derivs(f, x), b = ad::input_derivs(g, x);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(s[k], a[k] + b[k], 1e-15);
}

TEST(Taylor2, QuotientAndLog) {
  const double x = 1.7;
  const auto d = ad::input_derivs([](Taylor2<double> u) { return ad::log(u) / u; }, x);
  // (ln x / x)' = (1 - ln x)/x^2, '' = (2 ln x - 3)/x^3
  EXPECT_NEAR(d[1], (1 - std::log(x)) / (x * x), 1e-14);
  EXPECT_NEAR(d[2], (2 * std::log(x) - 3) / (x * x * x), 1e-14);
}

TEST(Taylor2, NetworkInputDerivativesMatchFiniteDifferences) {
  const auto net = init_mlp(ArchSpec::parse("2-[6,4]-1"), 17);
  const std::vector<double> x = {0.3, -0.6};
  const auto t = forward_with_input_derivs(net, x, 1);
  const double h = 1e-4;
  auto xp = x, xm = x;
  xp[1] += h;
  xm[1] -= h;
  const double fp = forward(net, xp), fm = forward(net, xm), f0 = forward(net, x);
  EXPECT_NEAR(t[0], f0, 1e-14);
  EXPECT_NEAR(t[1], (fp - fm) / (2 * h), 1e-8);
  EXPECT_NEAR(t[2], (fp - 2 * f0 + fm) / (h * h), 1e-5);
}

TEST(Taylor2, ParameterGradientOfSecondDerivative) {
  // d/d theta of u_xx(x; theta), reverse mode through the forward tangents.
  for (auto act : {Activation::Tanh, Activation::Sigmoid}) {
    ArchSpec arch = ArchSpec::parse("1-[5,3]-1");
    arch.activation = act;
    const auto net = init_mlp(arch, 8);
    const std::vector<double> x = {0.45};
    const auto g = ad::gradient(net.params, [&](std::span<const Var> p) {
      const auto t = forward_taylor<Var>(arch, p, x, 0);
      return t.d2 * t.d2 + t.d1;
    });
    const auto fd = ad::finite_difference_gradient(net.params, [&](std::span<const double> p) {
      const auto t = forward_taylor<double>(arch, p, x, 0);
      return t.d2 * t.d2 + t.d1;
    });
    for (std::size_t k = 0; k < fd.size(); ++k) EXPECT_LT(rel_err(g.grad[k], fd[k]), 1e-6) << "param " << k;
  }
}

TEST(Dot, NaryNodeMatchesBinaryChain) {
  const std::vector<double> theta = {0.5, -1.0, 2.0, 0.25};
  const std::vector<double> h = {1.5, 0.5, -2.0};
  const auto nary = ad::gradient(theta, [&](std::span<const Var> p) { return ad::dot(p.first(3), h, p[3]); });
  const auto chain = ad::gradient(theta, [&](std::span<const Var> p) {
    Var s = p[3];
    for (std::size_t k = 0; k < 3; ++k) s = s + p[k] * h[k];
    return s;
  });
  EXPECT_DOUBLE_EQ(nary.value, chain.value);
  for (std::size_t k = 0; k < theta.size(); ++k) EXPECT_DOUBLE_EQ(nary.grad[k], chain.grad[k]);
}
