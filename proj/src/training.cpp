#include "flatmin/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace flatmin {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool is_classification(const Dataset& d) { return d.task != Task::Regression; }

}  // namespace

void TrainConfig::validate() const {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw InvalidInput("train: eta must be positive");
  if (iterations < 1) throw InvalidInput("train: iterations must be at least 1");
  if (batch_size < 0) throw InvalidInput("train: batch size must be nonnegative");
  if (!(weight_decay >= 0.0)) throw InvalidInput("train: weight decay must be nonnegative");
  if (eval_every < 1) throw InvalidInput("train: eval_every must be at least 1");
}

Checkpoint evaluate(const Network& net, long iter, const Dataset& train, const Dataset* test,
                    LossKind kind, double weight_decay, const Matrix* null_projector) {
  Checkpoint c;
  c.iter = iter;
  const Matrix yh = forward(net, train.x);
  c.train_loss = loss(kind, yh, train.y, weight_decay, net);
  c.train_err = is_classification(train) ? classification_error(yh, train.y, train.task) : kNaN;
  c.test_loss = kNaN;
  c.test_err = kNaN;
  if (test) {
    const Matrix th = forward(net, test->x);
    c.test_loss = loss(kind, th, test->y, 0.0, net);
    c.test_err = is_classification(*test) ? classification_error(th, test->y, test->task) : kNaN;
  }
  c.norm_layers = layer_norms_sq(net);
  c.norm_total = std::accumulate(c.norm_layers.begin(), c.norm_layers.end(), 0.0);
  c.null_norm = null_projector ? (net.weights.front() * *null_projector).norm() : kNaN;
  return c;
}

RunRecord gd_run(const Network& net, const Dataset& train, const Dataset* test, LossKind kind,
                 const TrainConfig& cfg, const CheckpointObserver& observer) {
  cfg.validate();
  net.validate();
  train.validate();
  if (test) test->validate();
  if (train.size() == 0) throw InvalidInput("train: empty training set");

  std::optional<Matrix> projector;
  if (net.activation.is_identity()) projector = null_space_projector(train.x);
  const Matrix* proj = projector ? &*projector : nullptr;

  RunRecord rec;
  Network cur = net;
  const auto record = [&](long t) {
    Checkpoint c = evaluate(cur, t, train, test, kind, cfg.weight_decay, proj);
    if (!std::isfinite(c.train_loss) || c.train_loss > kDivergenceThreshold) {
      Checkpoint last = rec.checkpoints.empty() ? c : rec.checkpoints.back();
      throw Diverged("training diverged at iteration " + std::to_string(t), last);
    }
    if (observer) observer(c, cur);
    rec.checkpoints.push_back(std::move(c));
  };

  const Eigen::Index n = train.size();
  const bool full = cfg.batch_size == 0 || cfg.batch_size >= n;
  Rng rng(cfg.seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<Eigen::Index> batch(full ? 0 : static_cast<std::size_t>(cfg.batch_size));

  record(0);
  long t = 0;
  for (; t < cfg.iterations; ++t) {
    LossGradient lg;
    if (full) {
      lg = loss_and_gradient(cur, train, kind, cfg.weight_decay);
      if (cfg.stop_loss && lg.value < *cfg.stop_loss) {
        rec.stopped_early = true;
        break;
      }
    } else {
      for (auto& b : batch) {
        if (cfg.sampling == Sampling::WithReplacement) {
          b = pick(rng);
        } else {
          if (cursor == order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
          }
          b = order[cursor++];
        }
      }
      const Dataset mb = train.columns(batch);
      lg = loss_and_gradient(cur, mb, kind, cfg.weight_decay);
    }
    for (std::size_t k = 0; k < cur.weights.size(); ++k) {
      if (!all_finite(lg.grads[k])) {
        throw Diverged("non-finite gradient at iteration " + std::to_string(t),
                       rec.checkpoints.back());
      }
      cur.weights[k] -= cfg.eta * lg.grads[k];
    }
    if ((t + 1) % cfg.eval_every == 0) {
      record(t + 1);
      if (!full && cfg.stop_loss && rec.checkpoints.back().train_loss < *cfg.stop_loss) {
        ++t;
        rec.stopped_early = true;
        break;
      }
    }
  }
  if (rec.checkpoints.back().iter != t) record(t);
  rec.final_net = std::move(cur);
  return rec;
}

Matrix min_norm_solution(const Dataset& data) {
  require_finite(data.x, "min_norm_solution");
  return data.y * pseudoinverse(data.x);
}

MinNormGap min_norm_gap(const Matrix& w, const Dataset& data) {
  if (w.rows() != data.y.rows() || w.cols() != data.x.rows())
    throw InvalidInput("min_norm_gap: weight shape does not match the data");
  const Matrix wd = min_norm_solution(data);
  const double denom = std::max(wd.norm(), std::numeric_limits<double>::min());
  return {(w - wd).norm() / denom, (w * null_space_projector(data.x)).norm()};
}

std::vector<TikhonovPoint> tikhonov_path(const Dataset& train, const Dataset* test,
                                         std::span<const double> lambdas) {
  train.validate();
  const Eigen::Index d = train.x.rows();
  const Eigen::Index n = train.size();
  if (n == 0) throw InvalidInput("tikhonov_path: empty training set");
  const Network shape = Network::zeros({static_cast<int>(d), static_cast<int>(train.y.rows())},
                                       Activation::linear());
  std::vector<TikhonovPoint> out;
  for (double lambda : lambdas) {
    if (!(lambda > 0.0)) throw InvalidInput("tikhonov_path: lambda must be positive");
    const double shift = 2.0 * lambda * static_cast<double>(n);
    TikhonovPoint p;
    p.lambda = lambda;
    if (n < d) {
      // Push-through identity: (X X^T + sI)^{-1} X = X (X^T X + sI)^{-1}.
      Matrix g = train.x.transpose() * train.x;
      g.diagonal().array() += shift;
      p.weights = g.ldlt().solve(train.y.transpose()).transpose() * train.x.transpose();
    } else {
      Matrix g = train.x * train.x.transpose();
      g.diagonal().array() += shift;
      p.weights = g.ldlt().solve(train.x * train.y.transpose()).transpose();
    }
    Network net = shape;
    net.weights[0] = p.weights;
    const Checkpoint c = evaluate(net, 0, train, test, LossKind::Square, 0.0, nullptr);
    p.train_loss = c.train_loss;
    p.test_loss = c.test_loss;
    p.train_err = c.train_err;
    p.test_err = c.test_err;
    out.push_back(std::move(p));
  }
  return out;
}

EarlyStop early_stop_analysis(const RunRecord& rec) {
  if (rec.checkpoints.size() < 2) throw InsufficientData("early_stop_analysis: need two checkpoints");
  EarlyStop e;
  e.min_test_loss = std::numeric_limits<double>::infinity();
  for (const auto& c : rec.checkpoints) {
    if (!std::isfinite(c.test_loss)) throw InvalidInput("early_stop_analysis: missing test loss");
    if (c.test_loss < e.min_test_loss) {
      e.min_test_loss = c.test_loss;
      e.argmin_iter = c.iter;
    }
  }
  e.final_test_loss = rec.checkpoints.back().test_loss;
  e.overfit_ratio = e.min_test_loss > 0.0 ? e.final_test_loss / e.min_test_loss
                                          : (e.final_test_loss > 0.0 ? kNaN : 1.0);
  return e;
}

double margin_of(const Vector& u, const Dataset& data) {
  return (u.transpose() * data.x).cwiseProduct(data.y).minCoeff();
}

MaxMargin max_margin_oracle(const Dataset& data) {
  data.validate();
  if (data.task != Task::BinaryClassification)
    throw InvalidInput("max_margin_oracle: needs binary labels");
  if (data.x.rows() != 2) throw InvalidInput("max_margin_oracle: inputs must be two-dimensional");
  if (data.size() == 0) throw InvalidInput("max_margin_oracle: empty dataset");
  const auto dir = [](double th) { return Vector{{std::cos(th), std::sin(th)}}; };
  const auto m = [&](double th) { return margin_of(dir(th), data); };

  constexpr int kGrid = 36000;
  const double step = 2.0 * std::numbers::pi / kGrid;
  double best = -std::numeric_limits<double>::infinity();
  double best_th = 0.0;
  for (int k = 0; k < kGrid; ++k) {
    const double v = m(k * step);
    if (v > best) {
      best = v;
      best_th = k * step;
    }
  }
  if (!(best > 0.0)) throw NotSeparable("data are not linearly separable through the origin");
  double lo = best_th - step;
  double hi = best_th + step;
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double a = lo + (hi - lo) / 3.0;
    const double b = hi - (hi - lo) / 3.0;
    if (m(a) < m(b)) lo = a;
    else hi = b;
  }
  const double th = 0.5 * (lo + hi);
  MaxMargin r;
  r.direction = dir(m(th) >= best ? th : best_th);
  r.margin = margin_of(r.direction, data);
  return r;
}

double angle_deg(const Vector& a, const Vector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return kNaN;
  const Vector ua = a / na;
  const Vector ub = b / nb;
  const double c = ua.dot(ub);
  // atan2 form stays accurate for nearly parallel vectors.
  const double s = (ua - c * ub).norm();
  return std::atan2(s, c) * 180.0 / std::numbers::pi;
}

MarginTrace logistic_margin_run(const Dataset& data, const TrainConfig& cfg, const Vector& w0) {
  MarginTrace out;
  out.oracle = max_margin_oracle(data);
  Network net = Network::zeros({static_cast<int>(data.x.rows()), 1}, Activation::linear());
  if (w0.size() > 0) {
    if (w0.size() != data.x.rows()) throw InvalidInput("logistic_margin_run: w0 has the wrong size");
    net.weights[0] = w0.transpose();
  }
  const auto obs = [&out](const Checkpoint& c, const Network& cur) {
    const Vector w = cur.weights[0].row(0).transpose();
    out.iters.push_back(c.iter);
    out.angle_deg.push_back(angle_deg(w, out.oracle.direction));
    out.norm.push_back(w.norm());
    if (!out.separation_iter && c.train_err == 0.0) out.separation_iter = c.iter;
  };
  out.record = gd_run(net, data, nullptr, LossKind::Logistic, cfg, obs);
  return out;
}

}  // namespace flatmin
