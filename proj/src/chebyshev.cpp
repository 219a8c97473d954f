#include "flatmin/chebyshev.hpp"

#include <utility>

namespace flatmin::cheb {

double clenshaw(std::span<const double> c, double t) {
  if (c.empty()) return 0.0;
  double b1 = 0.0;
  double b2 = 0.0;
  for (std::size_t k = c.size() - 1; k >= 1; --k) {
    const double b0 = 2.0 * t * b1 - b2 + c[k];
    b2 = b1;
    b1 = b0;
  }
  return t * b1 - b2 + c[0];
}

std::vector<double> derivative_coeffs(std::span<const double> c) {
  const std::size_t n = c.size();
  if (n <= 1) return {0.0};
  // c'_{k-1} = c'_{k+1} + 2k c_k, with c'_0 halved at the end.
  std::vector<double> d(n + 1, 0.0);
  for (std::size_t k = n - 1; k >= 1; --k) d[k - 1] = d[k + 1] + 2.0 * static_cast<double>(k) * c[k];
  d[0] *= 0.5;
  d.resize(n - 1);
  return d;
}

Series::Series(std::vector<double> coeffs, double a, double b)
    : c_(std::move(coeffs)), a_(a), b_(b) {
  if (c_.empty()) c_.push_back(0.0);
  d1_ = derivative_coeffs(c_);
  d2_ = derivative_coeffs(d1_);
}

double Series::value(double x) const { return clenshaw(c_, to_unit(x, a_, b_)); }

double Series::derivative(double x) const {
  return clenshaw(d1_, to_unit(x, a_, b_)) * 2.0 / (b_ - a_);
}

double Series::second_derivative(double x) const {
  const double s = 2.0 / (b_ - a_);
  return clenshaw(d2_, to_unit(x, a_, b_)) * s * s;
}

}  // namespace flatmin::cheb
