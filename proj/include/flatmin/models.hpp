#pragma once

// Fully connected networks without biases (a constant-1 input row plays that
// role), their losses and exact gradients, the polynomial feature map used
// for feature-space linear regression, and weight initialization.
//
//   h_1 = W_1 x,  h_k = W_k sigma(h_{k-1}),  y_hat = h_{H+1}
//
// Parameter vectors concatenate the layers in order, each flattened
// row-major (flat(W) = vec(W^T)).

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "flatmin/chebyshev.hpp"
#include "flatmin/linalg.hpp"

namespace flatmin {

using Rng = std::mt19937_64;

enum class ActivationKind { Linear, Power, Polynomial, ReLU };

class Activation {
 public:
  Activation() = default;

  static Activation linear();
  static Activation power(int m);
  /// Chebyshev series on [a, b], evaluated in that form.
  static Activation polynomial(cheb::Series series);
  static Activation relu();

  ActivationKind kind() const { return kind_; }
  int power_degree() const { return power_; }
  const cheb::Series& series() const { return series_; }

  double apply(double z) const;
  /// ReLU derivative at 0 is 0.
  double derivative(double z) const;
  double second_derivative(double z) const;

  /// Linear, or Power(1).
  bool is_identity() const;
  bool is_smooth() const { return kind_ != ActivationKind::ReLU; }
  std::string name() const;

 private:
  ActivationKind kind_ = ActivationKind::Linear;
  int power_ = 1;
  cheb::Series series_;
};

struct Network {
  std::vector<int> widths;  // N_0 = d, ..., N_{H+1} = d'
  Activation activation;
  std::vector<Matrix> weights;  // W_k is N_k x N_{k-1}
  std::optional<std::uint64_t> seed;

  /// All-zero weights of the right shapes.
  static Network zeros(std::vector<int> widths, Activation activation);

  std::size_t hidden_layers() const { return weights.empty() ? 0 : weights.size() - 1; }
  std::size_t parameter_count() const;
  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  /// Throws InvalidInput unless weight shapes chain along widths.
  void validate() const;
};

enum class Task { Regression, BinaryClassification, MulticlassOneHot };

struct Dataset {
  Matrix x;  // d x n, columns are examples
  Matrix y;  // d' x n
  Task task = Task::Regression;

  Eigen::Index size() const { return x.cols(); }
  /// Column counts match, binary labels are +-1, one-hot columns sum to 1.
  void validate() const;
  Dataset columns(std::span<const Eigen::Index> idx) const;
};

enum class LossKind { Square, Logistic, CrossEntropy };

std::string to_string(ActivationKind k);
std::string to_string(Task t);
std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);
Task task_from_string(const std::string& s);

/// Pre- and post-activation values of every layer; post[0] is the input.
struct ForwardTrace {
  std::vector<Matrix> pre;   // pre[k-1] = h_k, k = 1..H+1
  std::vector<Matrix> post;  // post[k] = sigma(h_k) for hidden k; post[0] = x
  const Matrix& output() const { return pre.back(); }
};

ForwardTrace trace_forward(const Network& net, const Matrix& x);
Matrix forward(const Network& net, const Matrix& x);

/// Sum of squares of every weight entry.
double weight_norm_sq(const Network& net);
std::vector<double> layer_norms_sq(const Network& net);

/// Loss without the weight-decay term.
double data_loss(LossKind kind, const Matrix& y_hat, const Matrix& y);

/// Square: 1/2 ||Y_hat - Y||_F^2; Logistic and CrossEntropy: mean over
/// examples; each plus gamma * ||w||^2.
double loss(LossKind kind, const Matrix& y_hat, const Matrix& y, double weight_decay,
            const Network& net);

double loss(const Network& net, const Dataset& data, LossKind kind, double weight_decay = 0.0);

/// Exact gradient by backpropagation, one matrix per layer.
std::vector<Matrix> gradient(const Network& net, const Dataset& data, LossKind kind,
                             double weight_decay = 0.0);

struct LossGradient {
  double value = 0.0;
  std::vector<Matrix> grads;
};

/// Loss and its gradient from a single forward pass.
LossGradient loss_and_gradient(const Network& net, const Dataset& data, LossKind kind,
                               double weight_decay = 0.0);

/// d loss / d y_hat (no validation; used on hot paths).
Matrix output_gradient(LossKind kind, const Matrix& y_hat, const Matrix& y);

void check_loss_targets(LossKind kind, const Matrix& y_hat, const Matrix& y);

/// Fraction misclassified; ties are errors.
double classification_error(const Matrix& y_hat, const Matrix& y, Task task);

enum class FeatureBasis { Chebyshev, Monomial };

/// Rows phi_0(x) ... phi_k(x) for inputs in [-1, 1]. With normalize the map
/// is divided by sqrt(k + 1) so every column has norm at most 1. Monomial
/// mode is limited to degree <= 30.
Matrix feature_map_polynomial(std::span<const double> x, int degree,
                              FeatureBasis basis = FeatureBasis::Chebyshev,
                              bool normalize = false);

struct InitScheme {
  enum class Kind { Zero, Gaussian, RowSpace };
  Kind kind = Kind::Zero;
  double std = 0.1;
  Matrix data_x;  // RowSpace only

  static InitScheme zero() { return {Kind::Zero, 0.0, {}}; }
  static InitScheme gaussian(double std) { return {Kind::Gaussian, std, {}}; }
  static InitScheme row_space(const Matrix& x, double std) { return {Kind::RowSpace, std, x}; }
};

/// Fresh weights for net's architecture. Draws are layer by layer in
/// row-major order from mt19937_64(seed).
Network init(const Network& net, const InitScheme& scheme, std::uint64_t seed);

Vector flatten(const Network& net);
Network with_parameters(const Network& net, const Vector& w);
Vector flatten_layers(const std::vector<Matrix>& layers);

}  // namespace flatmin
