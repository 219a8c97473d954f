#include <doctest.h>

#include <cmath>

#include "flatmin/perturbation.hpp"
#include "test_util.hpp"

using namespace flatmin;
using testutil::gaussian;

namespace {

struct Setup {
  Dataset train;
  Dataset test;
  Network net;
  TrainConfig cfg;
};

// Degenerate linear regression: 16 features, 5 training points.
Setup degenerate(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Setup s;
  const Matrix w = gaussian(1, 16, rng);
  s.train = {gaussian(16, 5, rng, 0.25), Matrix(), Task::Regression};
  s.train.y = w * s.train.x;
  s.test = {gaussian(16, 50, rng, 0.25), Matrix(), Task::Regression};
  s.test.y = w * s.test.x;
  s.net = Network::zeros({16, 1}, Activation::linear());
  s.cfg.eta = 0.5;
  s.cfg.iterations = 20000;
  return s;
}

}  // namespace

TEST_CASE("perturb_weights rules") {
  const Network net = init(Network::zeros({3, 4, 2}, Activation::relu()), InitScheme::gaussian(1.0), 3);
  Rng rng(1);
  CHECK(flatten(perturb_weights(net, PerturbationRule::absolute(0.0), rng)) == flatten(net));

  Network flat = Network::zeros({3, 2}, Activation::linear());
  flat.weights[0].setConstant(0.7);
  CHECK(flatten(perturb_weights(flat, PerturbationRule::relative_std(0.25), rng)) == flatten(flat));

  Rng a(5), b(5);
  CHECK(flatten(perturb_weights(net, PerturbationRule::absolute(0.6), a)) ==
        flatten(perturb_weights(net, PerturbationRule::absolute(0.6), b)));

  // Empirical standard deviation of a large relative perturbation.
  Network big = init(Network::zeros({200, 100}, Activation::linear()), InitScheme::gaussian(2.0), 9);
  Rng c(7);
  const Vector delta = flatten(perturb_weights(big, PerturbationRule::relative_std(0.25), c)) - flatten(big);
  const double sd = std::sqrt(delta.squaredNorm() / static_cast<double>(delta.size()));
  CHECK(sd == doctest::Approx(0.25 * 2.0).epsilon(0.02));
}

TEST_CASE("a vanishing perturbation reproduces the unperturbed metrics") {
  const Setup s = degenerate(1);
  PerturbationConfig pc;
  pc.rule = PerturbationRule::absolute(0.0);
  pc.cycles = 1;
  pc.period = 100;
  const PerturbationRecord r = perturb_retrain_cycle(s.net, s.train, &s.test, LossKind::Square, s.cfg, pc);
  REQUIRE(r.cycles.size() == 1);
  CHECK(r.cycles[0].metrics.test_loss == doctest::Approx(r.initial.test_loss).epsilon(1e-10));
  CHECK(r.cycles[0].metrics.null_norm == doctest::Approx(r.initial.null_norm));
  CHECK(r.failures == 0);
}

TEST_CASE("retraining restores the row-space part and leaves the null part alone") {
  const Setup s = degenerate(2);
  PerturbationConfig pc;
  pc.rule = PerturbationRule::absolute(0.3);
  pc.cycles = 8;
  pc.period = 2000;
  pc.seed = 4;
  const PerturbationRecord r = perturb_retrain_cycle(s.net, s.train, &s.test, LossKind::Square, s.cfg, pc);
  CHECK(r.failures == 0);
  for (const auto& c : r.cycles) {
    CHECK(c.converged);
    CHECK(c.metrics.train_loss < 1e-8);
    CHECK(c.rowspace_drift < 1e-6);
    CHECK(c.retrain_null_change < 1e-10);
  }
  CHECK(r.cycles.back().metrics.null_norm > r.cycles.front().metrics.null_norm);
  CHECK(r.cycles.back().metrics.test_loss > r.initial.test_loss);
}

TEST_CASE("perturbation protocol is deterministic and validates its config") {
  const Setup s = degenerate(3);
  PerturbationConfig pc;
  pc.cycles = 3;
  pc.period = 500;
  pc.seed = 8;
  const auto a = perturb_retrain_cycle(s.net, s.train, &s.test, LossKind::Square, s.cfg, pc);
  const auto b = perturb_retrain_cycle(s.net, s.train, &s.test, LossKind::Square, s.cfg, pc);
  CHECK(flatten(a.final_net) == flatten(b.final_net));
  pc.cycles = 0;
  CHECK_THROWS_AS(perturb_retrain_cycle(s.net, s.train, &s.test, LossKind::Square, s.cfg, pc), InvalidInput);
}

TEST_CASE("failed retrains are counted, not fatal") {
  const Setup s = degenerate(4);
  TrainConfig slow = s.cfg;
  PerturbationConfig pc;
  pc.rule = PerturbationRule::absolute(5.0);
  pc.cycles = 2;
  pc.period = 1;
  pc.retrain_stop_loss = 1e-8;
  PerturbationRecord r = perturb_retrain_cycle(s.net, s.train, &s.test, LossKind::Square, slow, pc);
  CHECK(r.cycles.size() == 2);
  CHECK(r.failures == 0);
  TrainConfig tiny = slow;
  tiny.eta = 1e-4;
  tiny.iterations = 10;
  // Starting at the minimum, the initial run converges at once, so the
  // retrain budget is 10 steps: far too few at this step size.
  Network start = s.net;
  start.weights[0] = min_norm_solution(s.train);
  r = perturb_retrain_cycle(start, s.train, &s.test, LossKind::Square, tiny, pc);
  CHECK(r.failures == 2);
  CHECK_FALSE(r.cycles[0].converged);
}

TEST_CASE("walk_fit recovers the square-root law of a simulated random walk") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<PerturbationRecord> recs(2000);
  const int k = 6;
  for (auto& r : recs) {
    Vector pos = Vector::Zero(k);
    for (int m = 1; m <= 40; ++m) {
      for (int i = 0; i < k; ++i) pos(i) += 0.6 * n(rng);
      CycleRecord c;
      c.cycle = m;
      c.metrics.null_norm = pos.norm();
      c.metrics.norm_total = 1.0 + pos.squaredNorm();
      r.cycles.push_back(c);
    }
  }
  const WalkFit f = walk_fit(recs);
  CHECK(std::abs(f.exponent - 0.5) < 0.05);
  CHECK(f.ci_low < f.exponent);
  CHECK(f.ci_high > f.exponent);
  CHECK(f.norm_sq_slope == doctest::Approx(0.36 * k).epsilon(0.1));
  // E||sum of m steps|| = 0.6 sqrt(2) Gamma((k+1)/2) / Gamma(k/2) sqrt(m).
  const double c = 0.6 * std::sqrt(2.0) * std::tgamma((k + 1) / 2.0) / std::tgamma(k / 2.0);
  CHECK(f.walk_constant == doctest::Approx(c).epsilon(0.1));
}

TEST_CASE("walk_fit error paths") {
  std::vector<PerturbationRecord> recs(10);
  for (auto& r : recs)
    for (int m = 1; m <= 10; ++m) {
      CycleRecord c;
      c.cycle = m;
      c.metrics.null_norm = 0.0;
      r.cycles.push_back(c);
    }
  CHECK_THROWS_AS(walk_fit(recs), InvalidInput);
  recs[3].cycles[5].metrics.null_norm = std::nan("");
  CHECK_THROWS_AS(walk_fit(recs), InvalidInput);
  recs.pop_back();
  CHECK_THROWS_AS(walk_fit(recs), InsufficientData);
  recs.resize(10, recs.front());
  recs[0].cycles.resize(9);
  CHECK_THROWS_AS(walk_fit(recs), InsufficientData);
}

TEST_CASE("mean null norm grows with the cycle count") {
  std::vector<PerturbationRecord> recs;
  for (std::uint64_t rep = 0; rep < 30; ++rep) {
    const Setup s = degenerate(100);
    PerturbationConfig pc;
    pc.rule = PerturbationRule::absolute(0.3);
    pc.cycles = 12;
    pc.period = 300;
    pc.seed = 1000 + rep;
    recs.push_back(perturb_retrain_cycle(s.net, s.train, &s.test, LossKind::Square, s.cfg, pc));
  }
  const WalkFit f = walk_fit(recs);
  CHECK(f.exponent > 0.3);
  CHECK(f.exponent < 0.7);
  CHECK(f.norm_sq_slope > 0.0);
  // One-sided: later cycles never fall below earlier ones by more than 3
  // standard errors of the mean.
  for (std::size_t m = 1; m < f.mean_null_norm.size(); ++m) {
    double var = 0.0;
    for (const auto& r : recs) var += std::pow(r.cycles[m].metrics.null_norm - f.mean_null_norm[m], 2);
    const double se = std::sqrt(var / 29.0 / 30.0);
    CHECK(f.mean_null_norm[m] >= f.mean_null_norm[m - 1] - 3 * se);
  }
}
