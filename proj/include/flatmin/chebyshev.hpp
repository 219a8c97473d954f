#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace flatmin::cheb {

/// Affine map of x in [a, b] onto [-1, 1].
inline double to_unit(double x, double a, double b) { return (2.0 * x - (a + b)) / (b - a); }

/// Sum_k c_k T_k(t) by Clenshaw's recurrence.
double clenshaw(std::span<const double> c, double t);

/// Coefficients of d/dt of a Chebyshev series (one shorter; {0} for constants).
std::vector<double> derivative_coeffs(std::span<const double> c);

/// Value and x-derivative of a Chebyshev series living on [a, b].
class Series {
 public:
  Series() = default;
  Series(std::vector<double> coeffs, double a, double b);

  const std::vector<double>& coeffs() const { return c_; }
  double a() const { return a_; }
  double b() const { return b_; }
  std::size_t degree() const { return c_.empty() ? 0 : c_.size() - 1; }

  double value(double x) const;
  double derivative(double x) const;
  double second_derivative(double x) const;

 private:
  std::vector<double> c_{0.0};
  std::vector<double> d1_{0.0};
  std::vector<double> d2_{0.0};
  double a_ = -1.0;
  double b_ = 1.0;
};

}  // namespace flatmin::cheb
