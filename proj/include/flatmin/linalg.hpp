#pragma once

// Dense real linear algebra used throughout: SVD-based pseudoinverse and
// rank, symmetric eigendecomposition, Kronecker products and vec/unvec,
// and projectors onto the null space of a data matrix's transpose.
//
// Matrices are Eigen dense doubles. Whenever a matrix is flattened into a
// parameter vector elsewhere in the library the order is row-major, i.e.
// flat(W) = vec(W^T); vec() here is the standard column-stacking operator.

#include <Eigen/Dense>

#include <cstddef>

namespace flatmin {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Relative singular-value cutoff used by pseudoinverse() and friends.
inline constexpr double kDefaultRankTol = 1e-10;

struct SymEig {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // orthonormal columns, matched to eigenvalues
};

bool all_finite(const Matrix& m);

/// Throws InvalidInput if any entry is NaN or infinite.
void require_finite(const Matrix& m, const char* what);

/// Moore-Penrose pseudoinverse; singular values <= tol * sigma_max are
/// treated as zero.
Matrix pseudoinverse(const Matrix& m, double tol = kDefaultRankTol);

/// Full spectrum of a symmetric matrix, eigenvalues in descending order.
/// The input is symmetrized; asymmetry above 1e-8 * ||h|| is rejected.
SymEig sym_eig(const Matrix& h);

Matrix kron(const Matrix& a, const Matrix& b);

/// Column-stacking vectorization.
Vector vec(const Matrix& m);
Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols);

/// P in R^{d x d} projecting onto Null(x^T) for a d x n data matrix x:
/// P = P^T = P^2, P x = 0.
Matrix null_space_projector(const Matrix& x, double tol = kDefaultRankTol);

/// Number of singular values above tol * sigma_max (0 for the zero matrix).
std::size_t rank_tol(const Matrix& m, double tol = kDefaultRankTol);

/// ||a - b||_F / ||b||_F, with ||b|| floored at the smallest normal double.
double rel_diff(const Matrix& a, const Matrix& b);

}  // namespace flatmin
