#include "flatmin/perturbation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace flatmin {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kRetrainBudgetFactor = 10;

}  // namespace

void PerturbationConfig::validate() const {
  if (!(rule.value >= 0.0) || !std::isfinite(rule.value))
    throw InvalidInput("perturbation: factor/sigma must be nonnegative");
  if (period < 1) throw InvalidInput("perturbation: period must be at least 1");
  if (cycles < 1) throw InvalidInput("perturbation: cycles must be at least 1");
  if (!(retrain_stop_loss > 0.0)) throw InvalidInput("perturbation: retrain threshold must be positive");
}

Network perturb_weights(const Network& net, const PerturbationRule& rule, Rng& rng) {
  Network out = net;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& w : out.weights) {
    double sigma = rule.value;
    if (rule.kind == PerturbationRule::Kind::RelativeStd) {
      const double mean = w.mean();
      const double var = (w.array() - mean).square().mean();
      sigma = rule.value * std::sqrt(var);
    }
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        const double z = normal(rng);
        if (sigma > 0.0) w(i, j) += sigma * z;
      }
  }
  return out;
}

PerturbationRecord perturb_retrain_cycle(const Network& net, const Dataset& train,
                                         const Dataset* test, LossKind kind,
                                         const TrainConfig& train_cfg,
                                         const PerturbationConfig& pert_cfg) {
  pert_cfg.validate();
  train_cfg.validate();
  PerturbationRecord rec;

  TrainConfig cfg = train_cfg;
  cfg.stop_loss = pert_cfg.retrain_stop_loss;
  cfg.eval_every = std::max<long>(1, cfg.iterations);
  RunRecord first = gd_run(net, train, test, kind, cfg);
  if (!(first.last().train_loss < pert_cfg.retrain_stop_loss))
    throw Error("perturb_retrain_cycle: initial training did not reach the loss threshold");
  rec.initial_iters = std::max<long>(1, first.last().iter);
  if (first.last().iter < train_cfg.iterations) {
    // Use the rest of the budget to settle the minimum well below the threshold.
    TrainConfig rest = train_cfg;
    rest.iterations = train_cfg.iterations - first.last().iter;
    rest.eval_every = rest.iterations;
    rest.stop_loss.reset();
    first = gd_run(first.final_net, train, test, kind, rest);
  }
  rec.initial = first.last();
  rec.initial.iter = train_cfg.iterations;

  const bool identity = net.activation.is_identity();
  const bool single_linear = identity && net.weights.size() == 1;
  Matrix proj;
  if (identity) proj = null_space_projector(train.x);
  const Eigen::Index d = train.x.rows();

  Rng rng(pert_cfg.seed);
  Network cur = std::move(first.final_net);
  long total_iters = rec.initial.iter;
  const long budget = std::max(pert_cfg.period, kRetrainBudgetFactor * rec.initial_iters);

  for (int m = 1; m <= pert_cfg.cycles; ++m) {
    const Network before = cur;
    const Network perturbed = perturb_weights(cur, pert_cfg.rule, rng);
    CycleRecord c;
    c.cycle = m;

    TrainConfig rc = train_cfg;
    rc.iterations = pert_cfg.period;
    rc.eval_every = pert_cfg.period;
    rc.stop_loss.reset();
    rc.seed = train_cfg.seed + static_cast<std::uint64_t>(m);
    RunRecord run = gd_run(perturbed, train, test, kind, rc);
    c.retrain_iters = run.last().iter;
    while (!(run.last().train_loss < pert_cfg.retrain_stop_loss) && c.retrain_iters < budget) {
      rc.iterations = std::min(pert_cfg.period, budget - c.retrain_iters);
      rc.eval_every = rc.iterations;
      rc.seed += 1000003;
      run = gd_run(run.final_net, train, test, kind, rc);
      c.retrain_iters += run.last().iter;
    }
    cur = std::move(run.final_net);
    total_iters += c.retrain_iters;
    c.converged = run.last().train_loss < pert_cfg.retrain_stop_loss;
    if (!c.converged) ++rec.failures;
    c.metrics = evaluate(cur, total_iters, train, test, kind, train_cfg.weight_decay,
                         identity ? &proj : nullptr);
    if (single_linear) {
      const Matrix diff = (cur.weights[0] - before.weights[0]) * (Matrix::Identity(d, d) - proj);
      c.rowspace_drift = diff.norm() / std::max(before.weights[0].norm(), 1e-300);
    } else {
      c.rowspace_drift = kNaN;
    }
    c.retrain_null_change =
        identity ? ((cur.weights[0] - perturbed.weights[0]) * proj).norm() : kNaN;
    rec.cycles.push_back(std::move(c));
  }
  rec.final_net = std::move(cur);
  return rec;
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n != y.size() || n < 2) throw InsufficientData("fit_line: need at least two points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw InsufficientData("fit_line: x values are all equal");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (n > 2) {
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[i] - f.intercept - f.slope * x[i];
      rss += r * r;
    }
    f.slope_se = std::sqrt(rss / static_cast<double>(n - 2) / sxx);
  }
  return f;
}

WalkFit walk_fit(std::span<const PerturbationRecord> records) {
  if (records.size() < 10) throw InsufficientData("walk_fit: need at least 10 repetitions");
  std::size_t cycles = records.front().cycles.size();
  for (const auto& r : records) cycles = std::min(cycles, r.cycles.size());
  if (cycles < 10) throw InsufficientData("walk_fit: need at least 10 cycles per repetition");

  WalkFit w;
  w.repetitions = static_cast<int>(records.size());
  w.cycles = static_cast<int>(cycles);
  w.mean_null_norm.assign(cycles, 0.0);
  w.mean_norm_sq.assign(cycles, 0.0);
  for (const auto& r : records)
    for (std::size_t m = 0; m < cycles; ++m) {
      const Checkpoint& c = r.cycles[m].metrics;
      if (!std::isfinite(c.null_norm) || !std::isfinite(c.norm_total))
        throw InvalidInput("walk_fit: non-finite null-space norm (is the model linear?)");
      w.mean_null_norm[m] += c.null_norm;
      w.mean_norm_sq[m] += c.norm_total;
    }
  for (std::size_t m = 0; m < cycles; ++m) {
    w.mean_null_norm[m] /= static_cast<double>(records.size());
    w.mean_norm_sq[m] /= static_cast<double>(records.size());
  }

  std::vector<double> lx, ly, mx;
  for (std::size_t m = 0; m < cycles; ++m) mx.push_back(static_cast<double>(m + 1));
  for (std::size_t m = 2; m < cycles; ++m) {
    if (!(w.mean_null_norm[m] > 0.0))
      throw InvalidInput("walk_fit: null-space norm is zero; the growth exponent is undefined");
    lx.push_back(std::log(static_cast<double>(m + 1)));
    ly.push_back(std::log(w.mean_null_norm[m]));
  }
  const LineFit lf = fit_line(lx, ly);
  w.exponent = lf.slope;
  w.exponent_se = lf.slope_se;
  w.ci_low = lf.slope - 1.96 * lf.slope_se;
  w.ci_high = lf.slope + 1.96 * lf.slope_se;
  w.walk_constant = std::exp(lf.intercept);
  w.norm_sq_slope = fit_line(mx, w.mean_norm_sq).slope;
  return w;
}

}  // namespace flatmin
