#pragma once

// Perturb-retrain protocol: starting from a converged network, repeatedly
// add Gaussian noise to the weights and run gradient descent until the
// training loss is small again, tracking how the weights drift.

#include <cstdint>
#include <span>
#include <vector>

#include "flatmin/training.hpp"

namespace flatmin {

struct PerturbationRule {
  enum class Kind { RelativeStd, Absolute };
  Kind kind = Kind::Absolute;
  double value = 0.6;  // factor (RelativeStd) or sigma (Absolute)

  static PerturbationRule relative_std(double factor = 0.25) { return {Kind::RelativeStd, factor}; }
  static PerturbationRule absolute(double sigma = 0.6) { return {Kind::Absolute, sigma}; }
};

struct PerturbationConfig {
  PerturbationRule rule;
  long period = 4000;  // GD iterations after each perturbation
  int cycles = 10;
  double retrain_stop_loss = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CycleRecord {
  int cycle = 0;
  Checkpoint metrics;  // after retraining; iter counts all GD steps so far
  bool converged = true;
  long retrain_iters = 0;
  /// ||(I - P)(w_after - w_before)|| / ||w_before||, single-layer linear
  /// models only (NaN otherwise).
  double rowspace_drift = 0.0;
  /// ||(W1_after - W1_perturbed) P|| for identity activations (NaN otherwise).
  double retrain_null_change = 0.0;
};

struct PerturbationRecord {
  Checkpoint initial;  // converged, unperturbed
  long initial_iters = 0;  // first iteration below retrain_stop_loss
  std::vector<CycleRecord> cycles;
  int failures = 0;
  Network final_net;
};

/// RelativeStd adds N(0, (factor * std(layer))^2) per layer, with the
/// population standard deviation of the layer's entries; Absolute adds
/// N(0, sigma^2) to every weight.
Network perturb_weights(const Network& net, const PerturbationRule& rule, Rng& rng);

/// Trains net for train_cfg.iterations (the loss must fall below
/// retrain_stop_loss within them), then runs the cycles. A retrain that is still above the threshold after period
/// iterations continues up to 10x the initial convergence count; past that
/// the cycle is marked failed and the protocol moves on.
PerturbationRecord perturb_retrain_cycle(const Network& net, const Dataset& train,
                                         const Dataset* test, LossKind kind,
                                         const TrainConfig& train_cfg,
                                         const PerturbationConfig& pert_cfg);

struct WalkFit {
  double exponent = 0.0;  // slope of log mean null_norm against log m, m >= 3
  double exponent_se = 0.0;
  double ci_low = 0.0;  // exponent -+ 1.96 standard errors
  double ci_high = 0.0;
  double walk_constant = 0.0;  // exp(intercept): mean null_norm ~ c m^exponent
  double norm_sq_slope = 0.0;  // slope of mean ||w||^2 against m
  std::vector<double> mean_null_norm;  // index m - 1
  std::vector<double> mean_norm_sq;
  int repetitions = 0;
  int cycles = 0;
};

/// Needs at least 10 repetitions of at least 10 cycles each, with finite
/// null-space norms.
WalkFit walk_fit(std::span<const PerturbationRecord> records);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
};

/// Ordinary least squares y = intercept + slope x.
LineFit fit_line(std::span<const double> x, std::span<const double> y);

}  // namespace flatmin
