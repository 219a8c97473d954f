#include "flatmin/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "flatmin/error.hpp"

namespace flatmin {

const std::vector<std::string>& known_generators() {
  static const std::vector<std::string> g{"sine",          "linear_teacher",         "random_linear",
                                          "subspace_linear", "teacher_classification", "separable_2d",
                                          "scrambled"};
  return g;
}

double sine_target(double frequency, double x) { return std::sin(2.0 * std::numbers::pi * frequency * x); }

std::vector<double> sample_points(const std::string& sampling, int n) {
  if (n < 1) throw InvalidInput("sample_points: need at least one point");
  std::vector<double> x(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (sampling == "uniform-grid") x[k] = -1.0 + (2.0 * i + 1.0) / n;
    else if (sampling == "chebyshev-nodes") x[k] = std::cos(std::numbers::pi * (2.0 * i + 1.0) / (2.0 * n));
    else if (sampling == "linspace") x[k] = n == 1 ? 0.0 : -1.0 + 2.0 * i / (n - 1);
    else throw InvalidInput("unknown sampling '" + sampling + "'");
  }
  return x;
}

namespace {

Matrix gaussian(Eigen::Index r, Eigen::Index c, Rng& rng, double std = 1.0) {
  std::normal_distribution<double> n(0.0, std);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

int get_int(const Scenario& s, const std::string& key, long fallback, long lo = 0) {
  const long v = s.get_long("dataset." + key, fallback);
  if (v < lo) throw InvalidInput("dataset." + key + " must be at least " + std::to_string(lo));
  return static_cast<int>(v);
}

std::optional<Dataset> maybe(Dataset d) {
  if (d.size() == 0) return std::nullopt;
  return d;
}

GeneratedData sine(const Scenario& s, Rng& rng) {
  const double f = s.get_double("dataset.frequency", 4.0);
  const int n = get_int(s, "n_train", 9, 1);
  const int nt = get_int(s, "n_test", 100);
  const int degree = get_int(s, "features.degree", 30);
  const std::string b = s.get("dataset.features.basis", "chebyshev");
  if (b != "chebyshev" && b != "monomial") throw InvalidInput("dataset.features.basis: unknown basis '" + b + "'");
  const FeatureBasis basis = b == "monomial" ? FeatureBasis::Monomial : FeatureBasis::Chebyshev;
  const bool normalize = s.get_bool("dataset.features.normalize", true);
  const double noise = s.get_double("dataset.noise", 0.0);
  std::normal_distribution<double> eps(0.0, 1.0);

  GeneratedData g;
  const auto make = [&](const std::vector<double>& x, bool add_noise) {
    Dataset d;
    d.x = feature_map_polynomial(x, degree, basis, normalize);
    d.y.resize(1, static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i)
      d.y(0, static_cast<Eigen::Index>(i)) = sine_target(f, x[i]) + (add_noise && noise > 0 ? noise * eps(rng) : 0.0);
    return d;
  };
  const auto xs = sample_points(s.get("dataset.sampling", "chebyshev-nodes"), n);
  g.train = make(xs, true);
  g.raw_train = Eigen::Map<const Matrix>(xs.data(), 1, n);
  if (nt > 0) {
    const auto xt = sample_points(s.get("dataset.test_sampling", "linspace"), nt);
    g.test = make(xt, false);
    g.raw_test = Eigen::Map<const Matrix>(xt.data(), 1, nt);
  }
  return g;
}

Matrix with_bias(Matrix x) {
  x.conservativeResize(x.rows() + 1, Eigen::NoChange);
  x.row(x.rows() - 1).setOnes();
  return x;
}

GeneratedData linear_teacher(const Scenario& s, Rng& rng) {
  const int n = get_int(s, "n_train", 30, 1);
  const int nt = get_int(s, "n_test", 32);
  const int d = get_int(s, "d", 31, 2);  // including the bias row
  const int hidden = get_int(s, "teacher_hidden", 1, 1);
  const int dout = get_int(s, "outputs", 1, 1);
  const double std = 1.0 / std::sqrt(static_cast<double>(d - 1));
  const Matrix w1 = gaussian(hidden, d, rng);
  const Matrix w2 = gaussian(dout, hidden, rng);
  GeneratedData g;
  const auto make = [&](int m) {
    Dataset ds;
    ds.x = with_bias(gaussian(d - 1, m, rng, std));
    ds.y = w2 * (w1 * ds.x);
    return ds;
  };
  g.train = make(n);
  g.test = maybe(make(nt));
  g.meta["teacher_w1"] = std::vector<double>(w1.data(), w1.data() + w1.size());
  g.meta["teacher_w2"] = std::vector<double>(w2.data(), w2.data() + w2.size());
  return g;
}

GeneratedData random_linear(const Scenario& s, Rng& rng) {
  const int n = get_int(s, "n_train", 20, 1);
  const int nt = get_int(s, "n_test", 0);
  const int d = get_int(s, "d", 50, 1);
  const int dout = get_int(s, "outputs", 1, 1);
  const double noise = s.get_double("dataset.noise", 0.0);
  const double std = 1.0 / std::sqrt(static_cast<double>(d));
  const Matrix w = gaussian(dout, d, rng);
  const auto make = [&](int m) {
    Dataset ds;
    ds.x = gaussian(d, m, rng, std);
    ds.y = w * ds.x;
    if (noise > 0) ds.y += gaussian(dout, m, rng, noise);
    return ds;
  };
  GeneratedData g;
  g.train = make(n);
  g.test = maybe(make(nt));
  return g;
}

GeneratedData subspace_linear(const Scenario& s, Rng& rng) {
  const int n = get_int(s, "n_train", 32, 1);
  const int nt = get_int(s, "n_test", 0);
  const int d = get_int(s, "d", 10, 1);
  const int k = get_int(s, "k", 6, 1);
  if (k > d) throw InvalidInput("dataset.k must not exceed dataset.d");
  // The task (subspace and teacher) comes from its own seed so that sample
  // sizes and repetitions share it.
  Rng task_rng(static_cast<std::uint64_t>(s.get_long("dataset.task_seed", 1)));
  const Matrix b = Eigen::HouseholderQR<Matrix>(gaussian(d, k, task_rng)).householderQ() * Matrix::Identity(d, k);
  Vector w = gaussian(d, 1, task_rng);
  w *= 0.9 / w.norm();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto make = [&](int m) {
    Dataset ds;
    ds.x.resize(d, m);
    for (int i = 0; i < m; ++i) {
      Vector z = gaussian(k, 1, rng);
      z *= std::pow(unif(rng), 1.0 / k) / z.norm();
      ds.x.col(i) = b * z;
    }
    ds.y = w.transpose() * ds.x;
    return ds;
  };
  GeneratedData g;
  g.train = make(n);
  g.test = maybe(make(nt));
  g.reference = (b * (b.transpose() * w)).transpose();
  return g;
}

GeneratedData teacher_classification(const Scenario& s, Rng& rng) {
  const int n = get_int(s, "n_train", 200, 1);
  const int nt = get_int(s, "n_test", 1000);
  const int d = get_int(s, "d", 10, 1);
  const int classes = get_int(s, "classes", 2, 2);
  const bool bias = s.get_bool("dataset.bias", true);
  const Matrix v = gaussian(classes, d + (bias ? 1 : 0), rng);
  const auto make = [&](int m) {
    Dataset ds;
    ds.task = Task::MulticlassOneHot;
    ds.x = gaussian(d, m, rng);
    if (bias) ds.x = with_bias(ds.x);
    const Matrix scores = v * ds.x;
    ds.y = Matrix::Zero(classes, m);
    for (int i = 0; i < m; ++i) {
      Eigen::Index c = 0;
      scores.col(i).maxCoeff(&c);
      ds.y(c, i) = 1.0;
    }
    return ds;
  };
  GeneratedData g;
  g.train = make(n);
  g.test = maybe(make(nt));
  return g;
}

GeneratedData separable_2d(const Scenario& s, Rng& rng) {
  const int n = get_int(s, "n_train", 10, 2);
  const double margin = s.get_double("dataset.margin", 0.1);
  const double gap = s.get_double("dataset.gap", 0.3);
  const std::string mode = s.get("dataset.mode", "gap");
  if (!(margin > 0.0) || !(gap >= margin)) throw InvalidInput("separable_2d: need 0 < margin <= gap");
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  const double th = std::numbers::pi * unif(rng);
  const Vector u{{std::cos(th), std::sin(th)}};
  const Vector perp{{-u(1), u(0)}};
  GeneratedData g;
  Dataset& d = g.train;
  d.task = Task::BinaryClassification;
  d.x.resize(2, n);
  d.y.resize(1, n);
  int i = 0;
  if (mode == "gap") {
    for (double y : {1.0, -1.0}) {
      d.x.col(i) = y * margin * u + 0.5 * unif(rng) * perp;
      d.y(0, i++) = y;
    }
  } else if (mode != "band") {
    throw InvalidInput("separable_2d: unknown mode '" + mode + "'");
  }
  const double cut = mode == "gap" ? gap : margin;
  while (i < n) {
    const Vector x{{unif(rng), unif(rng)}};
    const double p = u.dot(x);
    if (std::abs(p) < cut) continue;
    d.x.col(i) = x;
    d.y(0, i++) = p > 0 ? 1.0 : -1.0;
  }
  g.meta["teacher_direction"] = {u(0), u(1)};
  return g;
}

GeneratedData dispatch(const std::string& gen, const Scenario& s, Rng& rng) {
  if (gen == "sine") return sine(s, rng);
  if (gen == "linear_teacher") return linear_teacher(s, rng);
  if (gen == "random_linear") return random_linear(s, rng);
  if (gen == "subspace_linear") return subspace_linear(s, rng);
  if (gen == "teacher_classification") return teacher_classification(s, rng);
  if (gen == "separable_2d") return separable_2d(s, rng);
  throw InvalidInput("unknown generator '" + gen + "'");
}

}  // namespace

GeneratedData generate_dataset(const Scenario& s, std::uint64_t seed) {
  Rng rng(seed);
  const std::string gen = s.get("dataset.generator");
  GeneratedData g;
  if (gen == "scrambled") {
    const std::string base = s.get("dataset.base");
    if (base == "scrambled") throw InvalidInput("scrambled: base generator cannot be scrambled");
    g = dispatch(base, s, rng);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(g.train.size()));
    std::iota(perm.begin(), perm.end(), 0);
    Rng prng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(perm.begin(), perm.end(), prng);
    const Matrix y = g.train.y;
    for (std::size_t i = 0; i < perm.size(); ++i)
      g.train.y.col(static_cast<Eigen::Index>(i)) = y.col(perm[i]);
    g.meta["scrambled"] = true;
  } else {
    g = dispatch(gen, s, rng);
  }
  g.train.validate();
  if (g.test) g.test->validate();
  g.meta["generator"] = gen;
  g.meta["seed"] = seed;
  return g;
}

}  // namespace flatmin
