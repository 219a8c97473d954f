#pragma once

// Polynomial approximations of ReLU-like activations, kept as Chebyshev
// series on a fit interval, with measured sup-norm and weighted-derivative
// errors, and the swap of a ReLU network's activation for such a fit.

#include <vector>

#include "flatmin/chebyshev.hpp"
#include "flatmin/models.hpp"

namespace flatmin {

struct PolyTarget {
  enum class Kind { ReLU, SoftReLU, Polynomial };
  Kind kind = Kind::ReLU;
  double beta = 20.0;             // SoftReLU: log(1 + e^{beta x}) / beta
  std::vector<double> monomial;   // Polynomial: ascending powers

  static PolyTarget relu() { return {}; }
  static PolyTarget soft_relu(double beta = 20.0) { return {Kind::SoftReLU, beta, {}}; }
  static PolyTarget polynomial(std::vector<double> c) { return {Kind::Polynomial, 0.0, std::move(c)}; }

  double value(double x) const;
  /// ReLU: step function, 0 at the origin.
  double derivative(double x) const;
};

inline constexpr int kMaxFitDegree = 60;

struct PolyFit {
  int degree = 0;
  double a = -3.0;
  double b = 3.0;
  std::vector<double> coeffs;  // Chebyshev, ascending, in the variable mapped to [-1, 1]
  double eps_sup = 0.0;
  double deriv_weighted_err = 0.0;

  cheb::Series series() const { return {coeffs, a, b}; }
};

/// Least squares on max(20 (degree + 1), 4000) Chebyshev nodes with weights
/// sqrt(1 - t^2), a quadrature for the uniform measure on the interval, so
/// the fit approximates the L2([a, b]) projection. eps_sup is measured on a
/// 10001-point uniform grid.
PolyFit fit_activation_poly(const PolyTarget& target, int degree, double a = -3.0, double b = 3.0);

/// Evaluation outside [a, b] is allowed; *extrapolated reports it.
double eval_poly(const PolyFit& fit, double x, bool* extrapolated = nullptr);
double eval_poly_derivative(const PolyFit& fit, double x, bool* extrapolated = nullptr);

/// max |f(x) - P(x)| over a 10001-point uniform grid on [a, b].
double sup_error(const PolyFit& fit, const PolyTarget& target);

/// max |f'(x) - P'(x)| sqrt(1 - t^2) over 10^4 Chebyshev nodes, t the
/// image of x in [-1, 1].
double weighted_derivative_error(const PolyFit& fit, const PolyTarget& target);

struct SwapResult {
  Network net;
  bool coverage_ok = true;  // every hidden pre-activation on the probes inside [a, b]
  double pre_min = 0.0;
  double pre_max = 0.0;
  /// A with max_i ||f_poly(x_i) - f_relu(x_i)|| <= eps_sup * A while the
  /// pre-activations stay inside the fit interval.
  double amplification = 0.0;
  double max_output_diff = 0.0;  // measured on the probes
};

SwapResult swap_activation(const Network& relu_net, const PolyFit& fit, const Matrix& probes);

}  // namespace flatmin
