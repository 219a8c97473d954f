#pragma once

// Gradient descent and SGD with checkpointed metrics, plus the closed-form
// references the runs are compared against: the minimum-norm solution, the
// Tikhonov path and the max-margin direction.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "flatmin/error.hpp"
#include "flatmin/models.hpp"

namespace flatmin {

enum class Sampling { WithReplacement, CyclicShuffle };

struct TrainConfig {
  double eta = 0.1;
  long iterations = 1000;
  int batch_size = 0;  // 0: full-batch GD
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  long eval_every = 100;
  std::optional<double> stop_loss;  // stop once the train loss drops below
  Sampling sampling = Sampling::WithReplacement;

  void validate() const;
};

inline constexpr double kDivergenceThreshold = 1e12;

/// Metrics at one iteration. Entries that do not apply are NaN: test
/// metrics without a test set, errors for regression, null_norm for
/// networks whose activation is not the identity.
struct Checkpoint {
  long iter = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double train_err = 0.0;
  double test_err = 0.0;
  double norm_total = 0.0;  // squared
  std::vector<double> norm_layers;  // squared, per layer
  double null_norm = 0.0;  // ||W_1 P_null||_F, P_null projecting onto Null(X^T)
};

struct RunRecord {
  std::vector<Checkpoint> checkpoints;
  Network final_net;
  bool stopped_early = false;

  const Checkpoint& last() const { return checkpoints.back(); }
};

class Diverged : public Error {
 public:
  Diverged(const std::string& what, Checkpoint last) : Error(what), last_(std::move(last)) {}
  const Checkpoint& last_checkpoint() const { return last_; }

 private:
  Checkpoint last_;
};

using CheckpointObserver = std::function<void(const Checkpoint&, const Network&)>;

/// w_{t+1} = w_t - eta grad L(w_t); minibatches of batch_size drawn
/// uniformly with replacement (or by cyclic reshuffling). A minibatch step
/// uses the loss of the minibatch alone, so batch size 1 with the square loss
/// is w <- w - eta (w x_i - y_i) x_i^T. Checkpoints at 0,
/// every eval_every iterations and at the end.
RunRecord gd_run(const Network& net, const Dataset& train, const Dataset* test, LossKind kind,
                 const TrainConfig& cfg, const CheckpointObserver& observer = {});

/// Metrics for net at iteration iter; the projector is optional.
Checkpoint evaluate(const Network& net, long iter, const Dataset& train, const Dataset* test,
                    LossKind kind, double weight_decay, const Matrix* null_projector);

struct MinNormGap {
  double rel_distance = 0.0;
  double null_norm = 0.0;
};

/// W^dagger = Y X^dagger.
Matrix min_norm_solution(const Dataset& data);

/// Distance of a linear map W (d' x d) to Y X^dagger and its Null(X^T) part.
MinNormGap min_norm_gap(const Matrix& w, const Dataset& data);

struct TikhonovPoint {
  double lambda = 0.0;
  Matrix weights;
  double train_loss = 0.0;
  double test_loss = 0.0;  // NaN without a test set
  double train_err = 0.0;
  double test_err = 0.0;
};

/// Minimizers of 1/2 ||W X - Y||^2 + lambda n ||W||^2:
/// W_lambda = Y X^T (X X^T + 2 lambda n I)^{-1}.
std::vector<TikhonovPoint> tikhonov_path(const Dataset& train, const Dataset* test,
                                         std::span<const double> lambdas);

struct EarlyStop {
  long argmin_iter = 0;
  double min_test_loss = 0.0;
  double final_test_loss = 0.0;
  double overfit_ratio = 1.0;  // final / min
};

EarlyStop early_stop_analysis(const RunRecord& rec);

struct MaxMargin {
  Vector direction;  // unit
  double margin = 0.0;
};

/// Brute force over 36000 directions in the plane, refined by ternary search
/// on the (concave) margin. Two-dimensional inputs only.
MaxMargin max_margin_oracle(const Dataset& data);

/// min_i y_i <u, x_i> for a unit direction u.
double margin_of(const Vector& u, const Dataset& data);

struct MarginTrace {
  RunRecord record;
  MaxMargin oracle;
  std::vector<long> iters;
  std::vector<double> angle_deg;  // angle(w_t, u*)
  std::vector<double> norm;       // ||w_t||
  std::optional<long> separation_iter;
};

/// Logistic-loss GD on a linear classifier from w0 (zero when empty).
MarginTrace logistic_margin_run(const Dataset& data, const TrainConfig& cfg,
                                const Vector& w0 = Vector());

double angle_deg(const Vector& a, const Vector& b);

}  // namespace flatmin
