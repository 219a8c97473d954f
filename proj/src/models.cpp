#include "flatmin/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flatmin/error.hpp"

namespace flatmin {

// ---------------------------------------------------------------- activation

Activation Activation::linear() { return {}; }

Activation Activation::power(int m) {
  if (m < 1) throw InvalidInput("power activation needs a positive exponent");
  Activation a;
  a.kind_ = ActivationKind::Power;
  a.power_ = m;
  return a;
}

Activation Activation::polynomial(cheb::Series series) {
  for (double c : series.coeffs())
    if (!std::isfinite(c)) throw InvalidInput("polynomial activation: non-finite coefficient");
  Activation a;
  a.kind_ = ActivationKind::Polynomial;
  a.series_ = std::move(series);
  return a;
}

Activation Activation::relu() {
  Activation a;
  a.kind_ = ActivationKind::ReLU;
  return a;
}

namespace {

double ipow(double z, int m) {
  double r = 1.0;
  for (int i = 0; i < m; ++i) r *= z;
  return r;
}

}  // namespace

double Activation::apply(double z) const {
  switch (kind_) {
    case ActivationKind::Linear: return z;
    case ActivationKind::Power: return ipow(z, power_);
    case ActivationKind::Polynomial: return series_.value(z);
    case ActivationKind::ReLU: return z > 0.0 ? z : 0.0;
  }
  return z;
}

double Activation::derivative(double z) const {
  switch (kind_) {
    case ActivationKind::Linear: return 1.0;
    case ActivationKind::Power: return power_ * ipow(z, power_ - 1);
    case ActivationKind::Polynomial: return series_.derivative(z);
    case ActivationKind::ReLU: return z > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

double Activation::second_derivative(double z) const {
  switch (kind_) {
    case ActivationKind::Linear: return 0.0;
    case ActivationKind::Power:
      return power_ < 2 ? 0.0 : power_ * (power_ - 1) * ipow(z, power_ - 2);
    case ActivationKind::Polynomial: return series_.second_derivative(z);
    case ActivationKind::ReLU: return 0.0;
  }
  return 0.0;
}

bool Activation::is_identity() const {
  return kind_ == ActivationKind::Linear || (kind_ == ActivationKind::Power && power_ == 1);
}

std::string Activation::name() const {
  switch (kind_) {
    case ActivationKind::Power: return "power(" + std::to_string(power_) + ")";
    case ActivationKind::Polynomial:
      return "polynomial(" + std::to_string(series_.degree()) + ")";
    default: return to_string(kind_);
  }
}

std::string to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::Linear: return "linear";
    case ActivationKind::Power: return "power";
    case ActivationKind::Polynomial: return "polynomial";
    case ActivationKind::ReLU: return "relu";
  }
  return "?";
}

std::string to_string(Task t) {
  switch (t) {
    case Task::Regression: return "regression";
    case Task::BinaryClassification: return "binary";
    case Task::MulticlassOneHot: return "multiclass";
  }
  return "?";
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::Square: return "square";
    case LossKind::Logistic: return "logistic";
    case LossKind::CrossEntropy: return "cross_entropy";
  }
  return "?";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "square") return LossKind::Square;
  if (s == "logistic") return LossKind::Logistic;
  if (s == "cross_entropy" || s == "crossentropy") return LossKind::CrossEntropy;
  throw InvalidInput("unknown loss kind '" + s + "'");
}

Task task_from_string(const std::string& s) {
  if (s == "regression") return Task::Regression;
  if (s == "binary") return Task::BinaryClassification;
  if (s == "multiclass") return Task::MulticlassOneHot;
  throw InvalidInput("unknown task '" + s + "'");
}

// ------------------------------------------------------------------ network

Network Network::zeros(std::vector<int> widths, Activation activation) {
  if (widths.size() < 2) throw InvalidInput("network needs at least input and output widths");
  for (int w : widths)
    if (w <= 0) throw InvalidInput("network widths must be positive");
  Network net;
  net.widths = std::move(widths);
  net.activation = std::move(activation);
  for (std::size_t k = 1; k < net.widths.size(); ++k)
    net.weights.push_back(Matrix::Zero(net.widths[k], net.widths[k - 1]));
  return net;
}

std::size_t Network::parameter_count() const {
  std::size_t p = 0;
  for (const auto& w : weights) p += static_cast<std::size_t>(w.size());
  return p;
}

void Network::validate() const {
  if (widths.size() < 2 || weights.size() != widths.size() - 1)
    throw InvalidInput("network: widths and weights disagree on depth");
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k].rows() != widths[k + 1] || weights[k].cols() != widths[k])
      throw InvalidInput("network: weight " + std::to_string(k + 1) + " has the wrong shape");
    require_finite(weights[k], "network weights");
  }
}

// ------------------------------------------------------------------ dataset

void Dataset::validate() const {
  if (x.cols() != y.cols()) throw InvalidInput("dataset: x and y column counts differ");
  require_finite(x, "dataset x");
  require_finite(y, "dataset y");
  if (task == Task::BinaryClassification) {
    if (y.rows() != 1) throw InvalidInput("dataset: binary targets must have one row");
    for (Eigen::Index i = 0; i < y.cols(); ++i)
      if (y(0, i) != 1.0 && y(0, i) != -1.0)
        throw InvalidInput("dataset: binary labels must be +1 or -1");
  } else if (task == Task::MulticlassOneHot) {
    for (Eigen::Index i = 0; i < y.cols(); ++i) {
      int ones = 0;
      for (Eigen::Index c = 0; c < y.rows(); ++c) {
        if (y(c, i) == 1.0) ++ones;
        else if (y(c, i) != 0.0) throw InvalidInput("dataset: one-hot entries must be 0 or 1");
      }
      if (ones != 1) throw InvalidInput("dataset: one-hot column must sum to 1");
    }
  }
}

Dataset Dataset::columns(std::span<const Eigen::Index> idx) const {
  Dataset out;
  out.task = task;
  out.x.resize(x.rows(), static_cast<Eigen::Index>(idx.size()));
  out.y.resize(y.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    out.x.col(static_cast<Eigen::Index>(j)) = x.col(idx[j]);
    out.y.col(static_cast<Eigen::Index>(j)) = y.col(idx[j]);
  }
  return out;
}

// ------------------------------------------------------------------ forward

namespace {

Matrix activate(const Activation& act, const Matrix& z) {
  if (act.is_identity()) return z;
  return z.unaryExpr([&act](double v) { return act.apply(v); });
}

Matrix activate_derivative(const Activation& act, const Matrix& z) {
  if (act.is_identity()) return Matrix::Ones(z.rows(), z.cols());
  return z.unaryExpr([&act](double v) { return act.derivative(v); });
}

void check_input(const Network& net, const Matrix& x) {
  if (net.weights.empty()) throw InvalidInput("network has no layers");
  if (x.rows() != net.weights.front().cols())
    throw InvalidInput("forward: input has " + std::to_string(x.rows()) + " rows, network expects " +
                       std::to_string(net.weights.front().cols()));
}

}  // namespace

ForwardTrace trace_forward(const Network& net, const Matrix& x) {
  check_input(net, x);
  ForwardTrace t;
  t.post.push_back(x);
  const std::size_t layers = net.weights.size();
  for (std::size_t k = 0; k < layers; ++k) {
    t.pre.push_back(net.weights[k] * t.post.back());
    if (k + 1 < layers) t.post.push_back(activate(net.activation, t.pre.back()));
  }
  return t;
}

Matrix forward(const Network& net, const Matrix& x) {
  check_input(net, x);
  Matrix h = net.weights.front() * x;
  for (std::size_t k = 1; k < net.weights.size(); ++k) h = net.weights[k] * activate(net.activation, h);
  return h;
}

// --------------------------------------------------------------------- loss

double weight_norm_sq(const Network& net) {
  double s = 0.0;
  for (const auto& w : net.weights) s += w.squaredNorm();
  return s;
}

std::vector<double> layer_norms_sq(const Network& net) {
  std::vector<double> out;
  for (const auto& w : net.weights) out.push_back(w.squaredNorm());
  return out;
}

namespace {

double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

void check_loss_targets(LossKind kind, const Matrix& y_hat, const Matrix& y) {
  if (y_hat.rows() != y.rows() || y_hat.cols() != y.cols())
    throw InvalidInput("loss: prediction and target shapes differ");
  if (kind == LossKind::Logistic) {
    if (y.rows() != 1) throw InvalidInput("logistic loss needs a single output row");
    for (Eigen::Index i = 0; i < y.cols(); ++i)
      if (y(0, i) != 1.0 && y(0, i) != -1.0) throw InvalidInput("logistic loss needs +-1 labels");
  } else if (kind == LossKind::CrossEntropy) {
    Dataset probe{Matrix(0, y.cols()), y, Task::MulticlassOneHot};
    probe.validate();
  }
}

double data_loss(LossKind kind, const Matrix& y_hat, const Matrix& y) {
  const double n = static_cast<double>(y.cols());
  switch (kind) {
    case LossKind::Square: return 0.5 * (y_hat - y).squaredNorm();
    case LossKind::Logistic: {
      double s = 0.0;
      for (Eigen::Index i = 0; i < y.cols(); ++i) s += softplus(-y(0, i) * y_hat(0, i));
      return s / n;
    }
    case LossKind::CrossEntropy: {
      double s = 0.0;
      for (Eigen::Index i = 0; i < y.cols(); ++i) {
        const double m = y_hat.col(i).maxCoeff();
        const double lse = m + std::log((y_hat.col(i).array() - m).exp().sum());
        s += lse * y.col(i).sum() - y.col(i).dot(y_hat.col(i));
      }
      return s / n;
    }
  }
  return 0.0;
}

double loss(LossKind kind, const Matrix& y_hat, const Matrix& y, double weight_decay,
            const Network& net) {
  if (weight_decay < 0.0) throw InvalidInput("weight decay must be nonnegative");
  check_loss_targets(kind, y_hat, y);
  double l = data_loss(kind, y_hat, y);
  if (weight_decay > 0.0) l += weight_decay * weight_norm_sq(net);
  return l;
}

double loss(const Network& net, const Dataset& data, LossKind kind, double weight_decay) {
  return loss(kind, forward(net, data.x), data.y, weight_decay, net);
}

Matrix output_gradient(LossKind kind, const Matrix& y_hat, const Matrix& y) {
  const double n = static_cast<double>(y.cols());
  switch (kind) {
    case LossKind::Square: return y_hat - y;
    case LossKind::Logistic: {
      Matrix g(1, y.cols());
      for (Eigen::Index i = 0; i < y.cols(); ++i)
        g(0, i) = -y(0, i) * sigmoid(-y(0, i) * y_hat(0, i)) / n;
      return g;
    }
    case LossKind::CrossEntropy: {
      Matrix g(y.rows(), y.cols());
      for (Eigen::Index i = 0; i < y.cols(); ++i) {
        const double m = y_hat.col(i).maxCoeff();
        Vector p = (y_hat.col(i).array() - m).exp();
        p /= p.sum();
        g.col(i) = (p * y.col(i).sum() - y.col(i)) / n;
      }
      return g;
    }
  }
  return y_hat - y;
}

LossGradient loss_and_gradient(const Network& net, const Dataset& data, LossKind kind,
                               double weight_decay) {
  if (weight_decay < 0.0) throw InvalidInput("weight decay must be nonnegative");
  const ForwardTrace t = trace_forward(net, data.x);
  check_loss_targets(kind, t.output(), data.y);
  const std::size_t layers = net.weights.size();
  LossGradient out;
  out.value = data_loss(kind, t.output(), data.y);
  out.grads.resize(layers);
  Matrix delta = output_gradient(kind, t.output(), data.y);
  for (std::size_t k = layers; k-- > 0;) {
    out.grads[k] = delta * t.post[k].transpose();
    if (k > 0) {
      delta = net.weights[k].transpose() * delta;
      if (!net.activation.is_identity())
        delta = delta.cwiseProduct(activate_derivative(net.activation, t.pre[k - 1]));
    }
  }
  if (weight_decay > 0.0) {
    out.value += weight_decay * weight_norm_sq(net);
    for (std::size_t k = 0; k < layers; ++k) out.grads[k] += 2.0 * weight_decay * net.weights[k];
  }
  return out;
}

std::vector<Matrix> gradient(const Network& net, const Dataset& data, LossKind kind,
                             double weight_decay) {
  return loss_and_gradient(net, data, kind, weight_decay).grads;
}

// ------------------------------------------------------- classification error

double classification_error(const Matrix& y_hat, const Matrix& y, Task task) {
  if (y_hat.rows() != y.rows() || y_hat.cols() != y.cols())
    throw InvalidInput("classification_error: shape mismatch");
  if (y.cols() == 0) return 0.0;
  std::size_t wrong = 0;
  if (task == Task::BinaryClassification) {
    for (Eigen::Index i = 0; i < y.cols(); ++i)
      if (!(y_hat(0, i) * y(0, i) > 0.0)) ++wrong;
  } else if (task == Task::MulticlassOneHot) {
    for (Eigen::Index i = 0; i < y.cols(); ++i) {
      Eigen::Index pred = 0;
      Eigen::Index truth = 0;
      const double best = y_hat.col(i).maxCoeff(&pred);
      y.col(i).maxCoeff(&truth);
      const auto ties = (y_hat.col(i).array() == best).count();
      if (ties > 1 || pred != truth) ++wrong;
    }
  } else {
    throw InvalidInput("classification_error: regression task has no classification error");
  }
  return static_cast<double>(wrong) / static_cast<double>(y.cols());
}

// -------------------------------------------------------------- feature map

Matrix feature_map_polynomial(std::span<const double> x, int degree, FeatureBasis basis,
                              bool normalize) {
  if (degree < 0) throw InvalidInput("feature map degree must be nonnegative");
  if (basis == FeatureBasis::Monomial && degree > 30)
    throw InvalidInput("monomial feature map is limited to degree 30");
  const auto n = static_cast<Eigen::Index>(x.size());
  Matrix phi(degree + 1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = x[static_cast<std::size_t>(i)];
    if (!(std::abs(t) <= 1.0 + 1e-12)) throw InvalidInput("feature map input outside [-1, 1]");
    phi(0, i) = 1.0;
    if (degree >= 1) phi(1, i) = t;
    for (int k = 2; k <= degree; ++k)
      phi(k, i) = basis == FeatureBasis::Chebyshev ? 2.0 * t * phi(k - 1, i) - phi(k - 2, i)
                                                   : t * phi(k - 1, i);
  }
  if (normalize) phi /= std::sqrt(static_cast<double>(degree + 1));
  return phi;
}

// ------------------------------------------------------------------- init

Network init(const Network& net, const InitScheme& scheme, std::uint64_t seed) {
  Network out = Network::zeros(net.widths, net.activation);
  out.seed = seed;
  if (scheme.kind == InitScheme::Kind::Zero) return out;
  if (!(scheme.std >= 0.0)) throw InvalidInput("init: standard deviation must be nonnegative");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& w : out.weights)
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = scheme.std * normal(rng);
  if (scheme.kind == InitScheme::Kind::RowSpace) {
    if (scheme.data_x.rows() != out.widths.front())
      throw InvalidInput("row-space init: data has the wrong input dimension");
    const Matrix p = null_space_projector(scheme.data_x);
    Matrix& w1 = out.weights.front();
    w1 -= w1 * p;
  }
  return out;
}

Vector flatten_layers(const std::vector<Matrix>& layers) {
  Eigen::Index total = 0;
  for (const auto& m : layers) total += m.size();
  Vector w(total);
  Eigen::Index off = 0;
  for (const auto& m : layers) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) w(off++) = m(i, j);
  }
  return w;
}

Vector flatten(const Network& net) { return flatten_layers(net.weights); }

Network with_parameters(const Network& net, const Vector& w) {
  if (static_cast<std::size_t>(w.size()) != net.parameter_count())
    throw InvalidInput("with_parameters: vector length does not match the network");
  Network out = net;
  Eigen::Index off = 0;
  for (auto& m : out.weights)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = w(off++);
  return out;
}

}  // namespace flatmin
