#include "flatmin/hessian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "flatmin/error.hpp"

namespace flatmin {

Matrix numeric_hessian(const ScalarField& f, const Vector& w, double step) {
  if (!(step > 0.0)) throw InvalidInput("numeric_hessian: step must be positive");
  const Eigen::Index p = w.size();
  Vector h(p);
  for (Eigen::Index i = 0; i < p; ++i) h(i) = step * (1.0 + std::abs(w(i)));

  auto eval = [&f](const Vector& v) {
    const double y = f(v);
    if (!std::isfinite(y)) throw Error("numeric_hessian: non-finite loss evaluation");
    return y;
  };

  const double f0 = eval(w);
  Matrix out(p, p);
  Vector v = w;
  for (Eigen::Index i = 0; i < p; ++i) {
    v(i) = w(i) + h(i);
    const double fp = eval(v);
    v(i) = w(i) - h(i);
    const double fm = eval(v);
    v(i) = w(i);
    out(i, i) = (fp - 2.0 * f0 + fm) / (h(i) * h(i));
    for (Eigen::Index j = i + 1; j < p; ++j) {
      double acc = 0.0;
      for (int si : {1, -1}) {
        for (int sj : {1, -1}) {
          v(i) = w(i) + si * h(i);
          v(j) = w(j) + sj * h(j);
          acc += si * sj * eval(v);
        }
      }
      v(i) = w(i);
      v(j) = w(j);
      out(i, j) = out(j, i) = acc / (4.0 * h(i) * h(j));
    }
  }
  return out;
}

namespace {

void require_one_hidden(const Network& net, const Dataset& data, const char* what) {
  net.validate();
  if (net.weights.size() != 2) throw InvalidInput(std::string(what) + ": needs exactly one hidden layer");
  if (data.x.rows() != net.input_dim() || data.y.rows() != net.output_dim() ||
      data.x.cols() != data.y.cols())
    throw InvalidInput(std::string(what) + ": dataset shape does not match the network");
}

}  // namespace

Matrix exact_hessian_one_hidden(const Network& net, const Dataset& data) {
  require_one_hidden(net, data, "exact_hessian_one_hidden");
  if (!net.activation.is_identity())
    throw InvalidInput("exact_hessian_one_hidden: activation must be linear");
  const Matrix& w1 = net.weights[0];
  const Matrix& w2 = net.weights[1];
  const Matrix& x = data.x;
  const Eigen::Index d = x.rows();
  const Eigen::Index hidden = w1.rows();
  const Eigen::Index dout = w2.rows();
  const Matrix xxt = x * x.transpose();
  const Matrix w1x = w1 * x;
  const Matrix e = w2 * w1x - data.y;

  const Eigen::Index p1 = hidden * d;
  const Eigen::Index p2 = dout * hidden;
  Matrix h(p1 + p2, p1 + p2);
  h.topLeftCorner(p1, p1) = kron(w2.transpose() * w2, xxt);
  h.bottomRightCorner(p2, p2) = kron(Matrix::Identity(dout, dout), w1x * w1x.transpose());

  Matrix c = kron(w2.transpose(), xxt * w1.transpose());
  const Matrix xet = x * e.transpose();  // column o is X (E^T)_{.o}
  for (Eigen::Index o = 0; o < dout; ++o)
    c.middleCols(o * hidden, hidden) += kron(Matrix::Identity(hidden, hidden), xet.col(o));
  h.topRightCorner(p1, p2) = c;
  h.bottomLeftCorner(p2, p1) = c.transpose();
  return h;
}

Matrix residual_hessian_one_hidden(const Network& net, const Dataset& data) {
  require_one_hidden(net, data, "residual_hessian_one_hidden");
  if (!net.activation.is_smooth())
    throw InvalidInput("residual_hessian_one_hidden: activation must be twice differentiable");
  const Activation& act = net.activation;
  const Matrix& w1 = net.weights[0];
  const Matrix& w2 = net.weights[1];
  const Matrix& x = data.x;
  const Eigen::Index d = x.rows();
  const Eigen::Index hidden = w1.rows();
  const Eigen::Index dout = w2.rows();
  const Eigen::Index n = x.cols();
  const Matrix z = w1 * x;
  Matrix hz(hidden, n);
  for (Eigen::Index a = 0; a < hidden; ++a)
    for (Eigen::Index i = 0; i < n; ++i) hz(a, i) = act.apply(z(a, i));
  const Matrix e = w2 * hz - data.y;
  const Matrix back = w2.transpose() * e;  // N x n

  const Eigen::Index p1 = hidden * d;
  const Eigen::Index p2 = dout * hidden;
  Matrix r = Matrix::Zero(p1 + p2, p1 + p2);
  // W1-W1: block diagonal over hidden units.
  for (Eigen::Index a = 0; a < hidden; ++a) {
    Matrix block = Matrix::Zero(d, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double s = back(a, i) * act.second_derivative(z(a, i));
      if (s != 0.0) block.noalias() += s * x.col(i) * x.col(i).transpose();
    }
    r.block(a * d, a * d, d, d) = block;
  }
  // W1-W2: entry ((a,b),(o,a)) = sum_i E(o,i) sigma'(z(a,i)) X(b,i).
  for (Eigen::Index o = 0; o < dout; ++o) {
    for (Eigen::Index a = 0; a < hidden; ++a) {
      Vector col = Vector::Zero(d);
      for (Eigen::Index i = 0; i < n; ++i) col += e(o, i) * act.derivative(z(a, i)) * x.col(i);
      const Eigen::Index cj = p1 + o * hidden + a;
      r.block(a * d, cj, d, 1) = col;
      r.block(cj, a * d, 1, d) = col.transpose();
    }
  }
  return r;
}

Matrix output_jacobian(const Network& net, const Matrix& x) {
  net.validate();
  const ForwardTrace t = trace_forward(net, x);
  const std::size_t layers = net.weights.size();
  const Eigen::Index n = x.cols();
  const Eigen::Index dout = net.output_dim();
  std::vector<Eigen::Index> offset(layers + 1, 0);
  for (std::size_t k = 0; k < layers; ++k) offset[k + 1] = offset[k] + net.weights[k].size();

  Matrix j = Matrix::Zero(n * dout, offset[layers]);
  for (Eigen::Index i = 0; i < n; ++i) {
    Matrix g = Matrix::Identity(dout, dout);
    for (std::size_t k = layers; k-- > 0;) {
      const Matrix& w = net.weights[k];
      const auto in = t.post[k].col(i);
      for (Eigen::Index o = 0; o < dout; ++o)
        for (Eigen::Index p = 0; p < w.rows(); ++p)
          for (Eigen::Index q = 0; q < w.cols(); ++q)
            j(i * dout + o, offset[k] + p * w.cols() + q) = g(o, p) * in(q);
      if (k > 0) {
        g = g * w;
        if (!net.activation.is_identity())
          for (Eigen::Index c = 0; c < g.cols(); ++c)
            g.col(c) *= net.activation.derivative(t.pre[k - 1](c, i));
      }
    }
  }
  return j;
}

Matrix gauss_newton_hessian(const Network& net, const Dataset& data) {
  if (data.y.rows() != net.output_dim() || data.y.cols() != data.x.cols())
    throw InvalidInput("gauss_newton_hessian: dataset shape does not match the network");
  const Matrix j = output_jacobian(net, data.x);
  return j.transpose() * j;
}

std::vector<Matrix> block_gramians(const Network& net, const Matrix& x) {
  const Matrix j = output_jacobian(net, x);
  std::vector<Matrix> out;
  Eigen::Index off = 0;
  for (const auto& w : net.weights) {
    const Matrix jk = j.middleCols(off, w.size());
    out.push_back(jk.transpose() * jk);
    off += w.size();
  }
  return out;
}

Matrix square_loss_hessian(const Network& net, const Dataset& data, double weight_decay) {
  Matrix h;
  if (net.weights.size() == 2 && net.activation.is_smooth()) {
    if (net.activation.is_identity()) h = exact_hessian_one_hidden(net, data);
    else h = gauss_newton_hessian(net, data) + residual_hessian_one_hidden(net, data);
  } else if (net.weights.size() == 1) {
    h = gauss_newton_hessian(net, data);  // exact: the model is linear in w
  } else {
    const auto f = [&net, &data](const Vector& w) {
      return loss(with_parameters(net, w), data, LossKind::Square);
    };
    h = numeric_hessian(f, flatten(net));
  }
  if (weight_decay > 0.0) h.diagonal().array() += 2.0 * weight_decay;
  return h;
}

SpectrumReport spectrum(const Matrix& h, double tol) {
  const SymEig eig = sym_eig(h);
  SpectrumReport r;
  r.eigenvalues = eig.eigenvalues;
  r.tolerance = tol;
  r.lambda_max = eig.eigenvalues.size() > 0 ? eig.eigenvalues(0) : 0.0;
  const double cutoff = tol * std::max(r.lambda_max, kSpectrumFloor);
  std::vector<Eigen::Index> zero;
  for (Eigen::Index i = 0; i < eig.eigenvalues.size(); ++i)
    if (std::abs(eig.eigenvalues(i)) <= cutoff) zero.push_back(i);
  r.zero_count = zero.size();
  r.degenerate_basis.resize(h.rows(), static_cast<Eigen::Index>(zero.size()));
  for (std::size_t c = 0; c < zero.size(); ++c)
    r.degenerate_basis.col(static_cast<Eigen::Index>(c)) = eig.eigenvectors.col(zero[c]);
  return r;
}

OverparamReport check_overparametrization(std::span<const int> widths, long long n) {
  if (widths.size() < 2) throw InvalidInput("check_overparametrization: need at least two widths");
  if (n < 1) throw InvalidInput("check_overparametrization: n must be positive");
  for (int w : widths)
    if (w <= 0) throw InvalidInput("check_overparametrization: widths must be positive");
  OverparamReport r;
  const std::size_t last = widths.size() - 1;
  for (std::size_t k = 1; k <= last; ++k) {
    const int tail_min = *std::min_element(widths.begin() + static_cast<std::ptrdiff_t>(k), widths.end());
    OverparamLayer layer;
    layer.k = static_cast<int>(k);
    layer.params = static_cast<long long>(widths[k]) * widths[k - 1];
    layer.bound = n * tail_min;
    layer.satisfied = layer.params > layer.bound;
    r.any_satisfied = r.any_satisfied || layer.satisfied;
    r.zero_eig_lower_bound = std::max(r.zero_eig_lower_bound, std::max(0LL, layer.params - layer.bound));
    r.per_layer.push_back(layer);
  }
  return r;
}

Vector degenerate_direction_one_hidden(const Network& net) {
  net.validate();
  if (net.weights.size() != 2)
    throw InvalidInput("degenerate_direction_one_hidden: needs exactly one hidden layer");
  const Matrix& w1 = net.weights[0];
  const Matrix& w2 = net.weights[1];
  const Eigen::Index hidden = w2.cols();
  Vector null_vec;
  if (w2.norm() == 0.0) {
    null_vec = Vector::Unit(hidden, 0);
  } else {
    Eigen::JacobiSVD<Matrix> svd(w2, Eigen::ComputeFullV);
    const auto r = static_cast<Eigen::Index>(rank_tol(w2));
    if (r >= hidden)
      throw NoDegenerateDirection("W2 has full column rank; Null(W2) is trivial");
    null_vec = svd.matrixV().col(r);
  }
  const Vector in_dir = Vector::Unit(w1.cols(), 0);
  Vector dir = Vector::Zero(static_cast<Eigen::Index>(net.parameter_count()));
  for (Eigen::Index a = 0; a < hidden; ++a)
    for (Eigen::Index b = 0; b < w1.cols(); ++b) dir(a * w1.cols() + b) = null_vec(a) * in_dir(b);
  return dir / dir.norm();
}

bool trivial_degeneracy_test(const Network& net, const Vector& direction, const Matrix& probes,
                             double eps) {
  if (!(eps > 0.0)) throw InvalidInput("trivial_degeneracy_test: eps must be positive");
  if (probes.cols() == 0) throw InvalidInput("trivial_degeneracy_test: no probe inputs");
  const Network moved = with_parameters(net, flatten(net) + eps * direction);
  const Matrix f0 = forward(net, probes);
  const Matrix f1 = forward(moved, probes);
  for (Eigen::Index i = 0; i < probes.cols(); ++i)
    if (!((f1.col(i) - f0.col(i)).norm() < 1e-9 * (1.0 + f0.col(i).norm()))) return false;
  return true;
}

}  // namespace flatmin
