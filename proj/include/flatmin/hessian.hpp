#pragma once

// Hessians of the square loss L(w) = 1/2 ||Y_hat(w) - Y||_F^2 and their
// spectra. At a zero-residual point the Hessian reduces to the Gauss-Newton
// term J^T J, where J is the Jacobian of vec(Y_hat) with respect to the
// parameters; away from such points the residual term sum_j E_j grad^2 Y_j
// is added back for the architectures where it is assembled exactly.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "flatmin/linalg.hpp"
#include "flatmin/models.hpp"

namespace flatmin {

inline constexpr double kZeroEigenTol = 1e-6;
inline constexpr double kSpectrumFloor = 1e-14;

struct SpectrumReport {
  Vector eigenvalues;  // descending
  std::size_t zero_count = 0;
  double lambda_max = 0.0;
  Matrix degenerate_basis;  // orthonormal columns spanning the near-null space
  double tolerance = kZeroEigenTol;
};

struct OverparamLayer {
  int k = 0;
  long long params = 0;  // N_k * N_{k-1}
  long long bound = 0;   // n * min(N_k, ..., N_{H+1})
  bool satisfied = false;
};

struct OverparamReport {
  std::vector<OverparamLayer> per_layer;
  bool any_satisfied = false;
  long long zero_eig_lower_bound = 0;
};

using ScalarField = std::function<double(const Vector&)>;

/// Central-difference Hessian with per-coordinate step step * (1 + |w_i|).
Matrix numeric_hessian(const ScalarField& f, const Vector& w, double step = 1e-5);

/// Square-loss Hessian of a one-hidden-layer linear network assembled from
/// its Kronecker blocks:
///   [ W2^T W2 (x) X X^T                 C                    ]
///   [ C^T                 I_{d'} (x) (W1 X)(W1 X)^T ]
/// with C = [W2^T (x) X X^T W1^T] + [I_N (x) X (E^T)_{.1}, ..., I_N (x) X (E^T)_{.d'}].
Matrix exact_hessian_one_hidden(const Network& net, const Dataset& data);

/// sum_j E_j grad^2 Y_hat_j for one-hidden networks with a smooth activation.
Matrix residual_hessian_one_hidden(const Network& net, const Dataset& data);

/// Jacobian of vec(Y_hat) (column-major, example-major blocks of d' rows)
/// with respect to the flat parameter vector, built from the backward
/// factors G_k = G_{k+1} W_{k+1} diag(sigma'(h_k)), G_{H+1} = I_{d'}.
Matrix output_jacobian(const Network& net, const Matrix& x);

/// J^T J. ReLU networks use their activation pattern at w.
Matrix gauss_newton_hessian(const Network& net, const Dataset& data);

/// Per-layer blocks J_k^T J_k of the Gauss-Newton matrix.
std::vector<Matrix> block_gramians(const Network& net, const Matrix& x);

/// Full square-loss Hessian (plus 2 gamma I for weight decay): exact for
/// one-hidden networks with smooth activations, finite differences otherwise.
Matrix square_loss_hessian(const Network& net, const Dataset& data, double weight_decay = 0.0);

SpectrumReport spectrum(const Matrix& h, double tol = kZeroEigenTol);

/// Evaluates N_k N_{k-1} > n * min(N_k, ..., N_{H+1}) for every layer k.
OverparamReport check_overparametrization(std::span<const int> widths, long long n);

/// Unit direction ([w1 (x) w2], 0) with w1 in Null(W2); throws
/// NoDegenerateDirection when W2 has full column rank.
Vector degenerate_direction_one_hidden(const Network& net);

/// Sampling test that f_{w + eps dir} agrees with f_w on every probe column
/// to 1e-9 (1 + ||f_w(x)||). A necessary condition for trivial degeneracy,
/// not a proof of it.
bool trivial_degeneracy_test(const Network& net, const Vector& direction, const Matrix& probes,
                             double eps);

}  // namespace flatmin
