// Runs the bundled scenarios and checks acceptance criteria 1-13.
//
// Prints one PASS/FAIL line per criterion. Exit status is 0 when every
// criterion passes, except those listed with --expect-fail, which are still
// reported as FAIL but do not change the status.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flatmin/experiments.hpp"

using namespace flatmin;

namespace {

std::string g_dir = FLATMIN_SCENARIO_DIR;
int g_threads = 1;

ScenarioResult run(const std::string& name) {
  RunOptions o;
  o.write = false;
  o.threads = g_threads;
  return run_scenario(Scenario::load(g_dir + "/" + name + ".scn"), o);
}

double num(const Json& j, const char* key) {
  const Json& v = j.at(key);
  return v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN();
}

struct Verdict {
  bool pass = true;
  std::ostringstream why;

  // Records a check; the note is printed either way.
  void check(bool ok, const std::string& note) {
    pass = pass && ok;
    why << (why.tellp() > 0 ? "; " : "") << note << (ok ? "" : " [x]");
  }
};

std::string fmt(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3g", v);
  return b;
}

bool all_ok(const ScenarioResult& r, Verdict& v) {
  const bool ok = r.runs_failed() == 0;
  v.check(ok, r.scenario.name() + " runs ok " + std::to_string(r.runs_ok()) + "/" + std::to_string(r.runs.size()));
  return ok;
}

void c1(Verdict& v) {
  const ScenarioResult r = run("min_norm");
  all_ok(r, v);
  double rel = 0.0, null = 0.0;
  for (const auto& x : r.runs) {
    rel = std::max(rel, num(x.metrics, "min_norm_rel_distance"));
    null = std::max(null, num(x.metrics, "max_null_ratio"));
  }
  v.check(r.runs.size() == 20, "problems " + std::to_string(r.runs.size()));
  v.check(rel < 1e-6, "max rel distance " + fmt(rel));
  v.check(null < 1e-10, "max null/norm " + fmt(null));
}

void c2(Verdict& v) {
  const ScenarioResult r = run("one_hidden_lin");
  all_ok(r, v);
  double gap = 0.0, path = 0.0;
  for (const auto& x : r.runs) {
    gap = std::max(gap, num(x.metrics, "min_norm_rel_distance"));
    path = std::max(path, num(x.metrics, "path_rel_diff"));
  }
  v.check(gap < 1e-4, "max |W2W1 - YX+|/|YX+| " + fmt(gap));
  v.check(path < 0.10, "max path test-error diff " + fmt(path));
}

// Criteria 3, 4 and 10 share the trained hessian scenarios.
struct HessianRuns {
  std::vector<ScenarioResult> results;
  double seconds = 0.0;
};

HessianRuns& hessian_runs() {
  static HessianRuns h = [] {
    HessianRuns out;
    const auto t0 = std::chrono::steady_clock::now();
    for (const char* n : {"hessian_linear", "hessian_power2"}) out.results.push_back(run(n));
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }();
  return h;
}

void c3(Verdict& v) {
  for (const auto& r : hessian_runs().results) {
    all_ok(r, v);
    double loss = 0.0, fd = 0.0;
    long zero = std::numeric_limits<long>::max();
    bool within = true, over = true;
    for (const auto& x : r.runs) {
      loss = std::max(loss, num(x.metrics, "train_loss"));
      fd = std::max(fd, num(x.metrics, "fd_rel_error"));
      zero = std::min(zero, x.metrics.value("zero_count", 0L));
      within = within && x.metrics.value("block_ranks_within_bound", false);
      over = over && x.metrics.value("overparametrized", false);
    }
    const std::string n = r.scenario.name() + ": ";
    v.check(r.runs.size() == 5 && over, n + std::to_string(r.runs.size()) + " overparametrized nets");
    v.check(loss < 1e-10, n + "max loss " + fmt(loss));
    v.check(zero >= 1, n + "min zero_count " + std::to_string(zero));
    v.check(within, n + "block ranks within bound");
    v.check(fd < 1e-5, n + "max fd error " + fmt(fd));
  }
}

void c4(Verdict& v) {
  for (const auto& r : hessian_runs().results) {
    double gn = 0.0;
    for (const auto& x : r.runs) gn = std::max(gn, num(x.metrics, "gauss_newton_rel_error"));
    v.check(gn < 1e-5, r.scenario.name() + ": max |H - JtJ|/|H| " + fmt(gn));
  }
}

void c10(Verdict& v) {
  for (const auto& r : hessian_runs().results) {
    double ratio = std::numeric_limits<double>::infinity(), grad = 0.0;
    for (const auto& x : r.runs) {
      ratio = std::min(ratio, num(x.metrics, "wd_min_over_2gamma"));
      grad = std::max(grad, num(x.metrics, "wd_gradient_norm"));
    }
    v.check(num(r.runs.front().metrics, "weight_decay") == 1e-3, r.scenario.name() + ": gamma 1e-3");
    v.why << "; " << r.scenario.name() << ": max gradient norm " << fmt(grad);
    v.check(ratio >= 0.5, r.scenario.name() + ": min eig/(2 gamma) " + fmt(ratio));
  }
}

void c5(Verdict& v) {
  const ScenarioResult r = run("brando");
  all_ok(r, v);
  const Json& a = r.aggregate;
  v.check(r.runs.size() == 30, "repetitions " + std::to_string(r.runs.size()));
  v.check(num(a, "max_retrain_train_loss") < 1e-6, "max retrain loss " + fmt(num(a, "max_retrain_train_loss")));
  v.check(num(a, "mean_test_loss_last") > num(a, "mean_test_loss_first"),
          "mean test loss first " + fmt(num(a, "mean_test_loss_first")) + " last " + fmt(num(a, "mean_test_loss_last")));
  const double e = num(a["walk"], "exponent");
  v.check(e >= 0.3 && e <= 0.7, "null-norm exponent " + fmt(e));
  v.check(num(a["walk"], "norm_sq_slope") > 0.0, "norm^2 slope " + fmt(num(a["walk"], "norm_sq_slope")));
}

void c6(Verdict& v) {
  const ScenarioResult r1 = run("brando1"), r2 = run("brando2");
  all_ok(r1, v);
  all_ok(r2, v);
  const double a = num(r1.aggregate["mean_curve_early_stop"], "overfit_ratio");
  const double b = num(r2.aggregate["mean_curve_early_stop"], "overfit_ratio");
  v.check(a > 1.05, "degree-30 overfit ratio " + fmt(a));
  v.check(b < 1.05, "degree-4 overfit ratio " + fmt(b));
}

void c7(Verdict& v) {
  const ScenarioResult r = run("brando3");
  all_ok(r, v);
  const Json& pts = r.aggregate["points"];
  v.check(pts.size() == 300 && pts.back()["sweep_value"] == "300", "degrees 1..300");
  const double last = num(pts.back(), "test_mse"), best = num(r.aggregate, "min_test_mse");
  v.check(last > 2.0 * best, "test mse at 300 " + fmt(last) + " vs min " + fmt(best) + " (degree " +
                                 r.aggregate["argmin"].get<std::string>() + ")");
}

void c8(Verdict& v) {
  const ScenarioResult r = run("width_sweep");
  all_ok(r, v);
  const double n = static_cast<double>(r.scenario.get_long("dataset.n_train"));
  const Json* threshold = nullptr;
  const Json* widest = &r.aggregate["points"].back();
  double lo = 1.0, hi = 0.0, train_err = 0.0;
  for (const auto& p : r.aggregate["points"]) {
    if (num(p, "parameter_count") < n) continue;
    if (!threshold) threshold = &p;
    train_err = std::max(train_err, num(p, "train_err"));
    lo = std::min(lo, num(p, "test_err"));
    hi = std::max(hi, num(p, "test_err"));
  }
  if (!threshold) {
    v.check(false, "no width with parameter count >= n");
    return;
  }
  v.check(train_err == 0.0, "max train error over widths with params >= n " + fmt(train_err));
  const double ct = num(*threshold, "test_loss"), cw = num(*widest, "test_loss");
  v.check(cw > ct, "test CE width " + threshold->at("sweep_value").get<std::string>() + " " + fmt(ct) + " < width " +
                       widest->at("sweep_value").get<std::string>() + " " + fmt(cw));
  v.check(100.0 * (hi - lo) < 5.0, "test error range " + fmt(100.0 * (hi - lo)) + " points");
}

void c9(Verdict& v) {
  const ScenarioResult r = run("logistic_margin");
  all_ok(r, v);
  const Json& a = r.aggregate;
  v.check(r.runs.size() == 10, "sets " + std::to_string(r.runs.size()));
  int below = 0;
  for (const auto& x : r.runs) below += num(x.metrics, "angle_final") < 5.0;
  v.check(below == 10, std::to_string(below) + "/10 angles < 5 deg, max " + fmt(num(a, "max_angle_final")));
  v.check(a["runs_norm_increasing"] == 10, "norm increasing in " + a["runs_norm_increasing"].dump() + "/10");
  v.check(a["runs_angle_decreasing"] == 10, "angle(T) < angle(T/10) in " + a["runs_angle_decreasing"].dump() + "/10");
}

void c11(Verdict& v) {
  const ScenarioResult r = run("relu_vs_poly");
  all_ok(r, v);
  const double g = num(r.aggregate, "max_accuracy_gap_points");
  v.check(g < 5.0, "max accuracy gap " + fmt(g) + " points");
}

void c12(Verdict& v) {
  const ScenarioResult r = run("scrambled");
  all_ok(r, v);
  const Json& f = r.runs.front().metrics["final"];
  const double tr = num(f, "train_err"), te = num(f, "test_err");
  v.check(tr == 0.0, "train error " + fmt(tr));
  v.check(std::abs(te - 0.5) <= 0.10, "test error " + fmt(te) + " vs chance 0.5");
}

void c13(Verdict& v) {
  const ScenarioResult r = run("sgd_trend");
  all_ok(r, v);
  std::string d;
  for (const auto& p : r.aggregate["points"]) d += (d.empty() ? "" : ", ") + fmt(num(p, "distance"));
  v.check(r.aggregate["monotone_decreasing"] == true, "distances " + d);
}

struct Criterion {
  int id;
  const char* title;
  double limit_s;  // 0 when unbounded
  std::function<void(Verdict&)> body;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flatmin acceptance criteria"};
  std::vector<int> expect_fail, only;
  app.add_option("--scenarios", g_dir, "Scenario directory");
  app.add_option("--threads", g_threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--expect-fail", expect_fail, "Criteria known to fail");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "min-norm convergence", 60, c1},
      {2, "one-hidden linear network", 120, c2},
      {3, "hessian degeneracy", 120, c3},
      {4, "gauss-newton identity", 0, c4},
      {5, "sine perturb-retrain", 600, c5},
      {6, "degenerate vs nondegenerate overfitting", 300, c6},
      {7, "min-norm degree sweep", 60, c7},
      {8, "width sweep", 600, c8},
      {9, "logistic margin", 180, c9},
      {10, "weight-decay hyperbolicity", 120, c10},
      {11, "relu vs degree-10 polynomial", 300, c11},
      {12, "scrambled labels", 0, c12},
      {13, "sgd trend", 0, c13},
  };
  const std::set<int> expected(expect_fail.begin(), expect_fail.end()), selected(only.begin(), only.end());
  int unexpected = 0, failed = 0, run_count = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    ++run_count;
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.body(v);
    } catch (const std::exception& e) {
      v.check(false, std::string("error: ") + e.what());
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    // The shared hessian runs count toward each criterion that uses them.
    if (c.id == 3 || c.id == 10) secs = std::max(secs, hessian_runs().seconds);
    if (c.limit_s > 0) v.check(secs < c.limit_s, "runtime " + fmt(secs) + " s < " + fmt(c.limit_s) + " s");
    else v.why << "; runtime " << fmt(secs) << " s";
    if (!v.pass) {
      ++failed;
      if (!expected.count(c.id)) ++unexpected;
    }
    std::printf("criterion %2d %s: %s (%s)%s\n", c.id, v.pass ? "PASS" : "FAIL", c.title, v.why.str().c_str(),
                !v.pass && expected.count(c.id) ? " [expected]" : "");
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed, %d unexpected failures\n", run_count - failed, run_count, unexpected);
  return unexpected == 0 ? 0 : 1;
}
