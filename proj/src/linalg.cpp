#include "flatmin/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "flatmin/error.hpp"

namespace flatmin {

namespace {

Eigen::BDCSVD<Matrix> thin_svd(const Matrix& m) {
  return Eigen::BDCSVD<Matrix>(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
}

std::size_t count_above(const Vector& sv, double tol) {
  if (sv.size() == 0) return 0;
  const double cutoff = tol * sv(0);
  if (sv(0) == 0.0) return 0;
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) ++r;
  return r;
}

}  // namespace

bool all_finite(const Matrix& m) { return m.allFinite(); }

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite())
    throw InvalidInput(std::string(what) + ": non-finite entries");
}

Matrix pseudoinverse(const Matrix& m, double tol) {
  require_finite(m, "pseudoinverse");
  if (m.size() == 0) return Matrix(m.cols(), m.rows());
  const auto svd = thin_svd(m);
  const Vector& sv = svd.singularValues();
  const std::size_t r = count_above(sv, tol);
  Matrix out = Matrix::Zero(m.cols(), m.rows());
  for (std::size_t k = 0; k < r; ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    out.noalias() += (svd.matrixV().col(i) / sv(i)) * svd.matrixU().col(i).transpose();
  }
  return out;
}

SymEig sym_eig(const Matrix& h) {
  if (h.rows() != h.cols()) throw InvalidInput("sym_eig: matrix is not square");
  require_finite(h, "sym_eig");
  const double scale = h.norm();
  if ((h - h.transpose()).norm() > 1e-8 * std::max(scale, 1e-300))
    throw InvalidInput("sym_eig: matrix is not symmetric");
  const Matrix sym = 0.5 * (h + h.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw Error("sym_eig: eigensolver failed");
  // Eigen returns ascending order.
  SymEig out;
  out.eigenvalues = es.eigenvalues().reverse();
  out.eigenvectors = es.eigenvectors().rowwise().reverse();
  return out;
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Vector vec(const Matrix& m) {
  return Eigen::Map<const Vector>(m.data(), m.size());
}

Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != v.size()) throw InvalidInput("unvec: size mismatch");
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

Matrix null_space_projector(const Matrix& x, double tol) {
  require_finite(x, "null_space_projector");
  const Eigen::Index d = x.rows();
  Matrix p = Matrix::Identity(d, d);
  if (x.size() == 0) return p;
  const auto svd = thin_svd(x);
  const std::size_t r = count_above(svd.singularValues(), tol);
  const Matrix u = svd.matrixU().leftCols(static_cast<Eigen::Index>(r));
  p.noalias() -= u * u.transpose();
  return 0.5 * (p + p.transpose());
}

std::size_t rank_tol(const Matrix& m, double tol) {
  if (!(tol > 0.0 && tol < 1.0)) throw InvalidInput("rank_tol: tol must lie in (0,1)");
  require_finite(m, "rank_tol");
  if (m.size() == 0) return 0;
  return count_above(thin_svd(m).singularValues(), tol);
}

double rel_diff(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(b.norm(), std::numeric_limits<double>::min());
}

}  // namespace flatmin
