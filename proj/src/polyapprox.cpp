#include "flatmin/polyapprox.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "flatmin/error.hpp"

namespace flatmin {

double PolyTarget::value(double x) const {
  switch (kind) {
    case Kind::ReLU: return x > 0.0 ? x : 0.0;
    case Kind::SoftReLU: {
      const double t = beta * x;
      return (std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)))) / beta;
    }
    case Kind::Polynomial: {
      double s = 0.0;
      for (auto it = monomial.rbegin(); it != monomial.rend(); ++it) s = s * x + *it;
      return s;
    }
  }
  return 0.0;
}

double PolyTarget::derivative(double x) const {
  switch (kind) {
    case Kind::ReLU: return x > 0.0 ? 1.0 : 0.0;
    case Kind::SoftReLU: {
      const double t = beta * x;
      return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
    }
    case Kind::Polynomial: {
      double s = 0.0;
      for (std::size_t k = monomial.size(); k-- > 1;) s = s * x + static_cast<double>(k) * monomial[k];
      return s;
    }
  }
  return 0.0;
}

namespace {

void check_interval(double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b) || !(a < b))
    throw InvalidInput("polynomial fit: interval must be finite with a < b");
}

double from_unit(double t, double a, double b) { return 0.5 * (a + b) + 0.5 * (b - a) * t; }

}  // namespace

PolyFit fit_activation_poly(const PolyTarget& target, int degree, double a, double b) {
  if (degree < 0) throw InvalidInput("polynomial fit: degree must be nonnegative");
  if (degree > kMaxFitDegree)
    throw InvalidInput("polynomial fit: degree above " + std::to_string(kMaxFitDegree) + " is not supported");
  check_interval(a, b);
  if (target.kind == PolyTarget::Kind::SoftReLU && !(target.beta > 0.0))
    throw InvalidInput("polynomial fit: SoftReLU beta must be positive");

  const int m = std::max(20 * (degree + 1), 4000);
  Matrix v(m, degree + 1);
  Vector rhs(m);
  for (int j = 0; j < m; ++j) {
    const double t = std::cos(std::numbers::pi * (j + 0.5) / m);
    const double sw = std::sqrt(std::sqrt(1.0 - t * t));  // sqrt of the quadrature weight
    double tk_1 = 1.0, tk = t;
    v(j, 0) = sw;
    if (degree >= 1) v(j, 1) = sw * t;
    for (int k = 2; k <= degree; ++k) {
      const double next = 2.0 * t * tk - tk_1;
      tk_1 = tk;
      tk = next;
      v(j, k) = sw * next;
    }
    rhs(j) = sw * target.value(from_unit(t, a, b));
  }
  const Vector c = v.colPivHouseholderQr().solve(rhs);

  PolyFit fit;
  fit.degree = degree;
  fit.a = a;
  fit.b = b;
  fit.coeffs.assign(c.data(), c.data() + c.size());
  fit.eps_sup = sup_error(fit, target);
  fit.deriv_weighted_err = weighted_derivative_error(fit, target);
  return fit;
}

double eval_poly(const PolyFit& fit, double x, bool* extrapolated) {
  if (extrapolated) *extrapolated = x < fit.a || x > fit.b;
  return cheb::clenshaw(fit.coeffs, cheb::to_unit(x, fit.a, fit.b));
}

double eval_poly_derivative(const PolyFit& fit, double x, bool* extrapolated) {
  if (extrapolated) *extrapolated = x < fit.a || x > fit.b;
  return fit.series().derivative(x);
}

double sup_error(const PolyFit& fit, const PolyTarget& target) {
  constexpr int kGrid = 10001;
  double e = 0.0;
  for (int i = 0; i < kGrid; ++i) {
    const double x = fit.a + (fit.b - fit.a) * i / (kGrid - 1);
    e = std::max(e, std::abs(target.value(x) - eval_poly(fit, x)));
  }
  return e;
}

double weighted_derivative_error(const PolyFit& fit, const PolyTarget& target) {
  constexpr int kNodes = 10000;
  const cheb::Series s = fit.series();
  double e = 0.0;
  for (int j = 0; j < kNodes; ++j) {
    const double t = std::cos(std::numbers::pi * (j + 0.5) / kNodes);
    const double x = from_unit(t, fit.a, fit.b);
    e = std::max(e, std::abs(target.derivative(x) - s.derivative(x)) * std::sqrt(1.0 - t * t));
  }
  return e;
}

SwapResult swap_activation(const Network& relu_net, const PolyFit& fit, const Matrix& probes) {
  relu_net.validate();
  if (relu_net.activation.kind() != ActivationKind::ReLU)
    throw InvalidInput("swap_activation: network activation must be ReLU");
  SwapResult r;
  r.net = relu_net;
  r.net.activation = Activation::polynomial(fit.series());

  const ForwardTrace t = trace_forward(relu_net, probes);
  r.pre_min = std::numeric_limits<double>::infinity();
  r.pre_max = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < t.pre.size(); ++k) {
    if (t.pre[k].size() == 0) continue;
    r.pre_min = std::min(r.pre_min, t.pre[k].minCoeff());
    r.pre_max = std::max(r.pre_max, t.pre[k].maxCoeff());
  }
  if (relu_net.weights.size() == 1) r.pre_min = r.pre_max = 0.0;
  r.coverage_ok = r.pre_min >= fit.a && r.pre_max <= fit.b;

  // Lipschitz constant of P on the interval, sampled densely.
  const cheb::Series s = fit.series();
  double lip = 0.0;
  for (int i = 0; i <= 10000; ++i)
    lip = std::max(lip, std::abs(s.derivative(fit.a + (fit.b - fit.a) * i / 10000.0)));
  double acc = 0.0;
  const std::size_t layers = relu_net.weights.size();
  for (std::size_t k = 0; k + 1 < layers; ++k) {
    const double wn = k == 0 ? 0.0 : relu_net.weights[k].operatorNorm();
    acc = std::sqrt(static_cast<double>(relu_net.weights[k].rows())) + lip * wn * acc;
  }
  r.amplification = relu_net.weights.back().operatorNorm() * acc;

  const Matrix diff = forward(r.net, probes) - forward(relu_net, probes);
  r.max_output_diff = diff.size() ? diff.colwise().norm().maxCoeff() : 0.0;
  return r;
}

}  // namespace flatmin
