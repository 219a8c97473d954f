#include "flatmin/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <thread>

#include "flatmin/error.hpp"
#include "flatmin/hessian.hpp"
#include "flatmin/polyapprox.hpp"

#ifndef FLATMIN_CODE_VERSION
#define FLATMIN_CODE_VERSION "unknown"
#endif

namespace flatmin {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// NaN is not representable in JSON; it is stored as null.
Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double get_num(const Json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number()) return kNaN;
  return j[key].get<double>();
}

Json checkpoint_json(const Checkpoint& c) {
  return {{"iter", c.iter},           {"train_loss", num(c.train_loss)}, {"test_loss", num(c.test_loss)},
          {"train_err", num(c.train_err)}, {"test_err", num(c.test_err)},   {"norm_total", num(c.norm_total)},
          {"null_norm", num(c.null_norm)}};
}

struct RunOutput {
  Json metrics = Json::object();
  std::vector<NamedTable> tables;  // per-run tables, suffixes of the file name
  std::vector<std::pair<std::string, Json>> documents;  // per-run JSON files
};

using Aggregator = std::function<void(const Scenario&, const std::vector<RunSummary>&, Json&,
                                      std::vector<NamedTable>&)>;

std::vector<std::string> sweep_values(const Scenario& s) {
  if (!s.has("sweep.param")) return {""};
  try {
    std::vector<std::string> out;
    for (long v : s.get_longs("sweep.values")) out.push_back(std::to_string(v));
    return out;
  } catch (const InvalidInput&) {
    return s.get_strings("sweep.values");
  }
}

std::vector<int> hidden_widths(const Scenario& s) {
  std::vector<int> w;
  for (long v : s.get_longs("model.hidden")) {
    if (v < 1) throw InvalidInput("model.hidden: widths must be positive");
    w.push_back(static_cast<int>(v));
  }
  return w;
}

std::uint64_t dataset_seed(const Scenario& s, std::uint64_t run_seed) {
  if (!s.has("dataset.seed")) return run_seed;
  return static_cast<std::uint64_t>(s.get_long("dataset.seed"));
}

struct Prepared {
  GeneratedData data;
  const Dataset* test() const { return data.test ? &*data.test : nullptr; }
};

Prepared prepare(const Scenario& s, std::uint64_t seed, RunOutput& out) {
  Prepared p{generate_dataset(s, dataset_seed(s, seed))};
  out.metrics["dataset_hash"] = dataset_hash(p.data.train, p.test());
  out.metrics["n_train"] = p.data.train.size();
  if (p.data.test) out.metrics["n_test"] = p.data.test->size();
  return p;
}

// Largest null_norm / ||w|| over the checkpoints, 0/0 counted as 0.
double max_null_ratio(const RunRecord& rec) {
  double r = 0.0;
  for (const auto& c : rec.checkpoints) {
    if (std::isnan(c.null_norm)) return kNaN;
    if (c.null_norm == 0.0) continue;
    r = std::max(r, c.null_norm / std::sqrt(c.norm_total));
  }
  return r;
}

CsvTable mean_table_by_sweep(const std::vector<RunSummary>& runs, const std::vector<std::string>& keys,
                             Json& points) {
  std::vector<std::string> header{"sweep_value", "runs_ok"};
  for (const auto& k : keys) header.push_back(k);
  CsvTable t(header);
  std::vector<std::string> order;
  for (const auto& r : runs)
    if (std::find(order.begin(), order.end(), r.sweep_value) == order.end()) order.push_back(r.sweep_value);
  points = Json::array();
  for (const auto& v : order) {
    std::vector<double> sum(keys.size(), 0.0);
    int ok = 0;
    for (const auto& r : runs) {
      if (r.sweep_value != v || !r.ok) continue;
      ++ok;
      for (std::size_t k = 0; k < keys.size(); ++k) sum[k] += get_num(r.metrics, keys[k].c_str());
    }
    std::vector<std::string> row{v, std::to_string(ok)};
    Json p{{"sweep_value", v}, {"runs_ok", ok}};
    for (std::size_t k = 0; k < keys.size(); ++k) {
      const double m = ok ? sum[k] / ok : kNaN;
      row.push_back(format_double(m));
      p[keys[k]] = num(m);
    }
    t.add_row(std::move(row));
    points.push_back(std::move(p));
  }
  return t;
}

// --- train / teacher_student ----------------------------------------------

RunOutput run_train(const Scenario& s, std::uint64_t seed) {
  RunOutput out;
  const Prepared p = prepare(s, seed, out);
  const Dataset& train = p.data.train;
  const Network net0 = build_network(s, train, seed);
  const LossKind kind = scenario_loss(s, train.task);
  const TrainConfig cfg = train_config(s, seed);
  const RunRecord rec = gd_run(net0, train, p.test(), kind, cfg);
  out.tables.emplace_back("checkpoints", run_record_table(rec));
  if (s.get_bool("output.networks", false)) {
    out.documents.emplace_back("network", network_to_json(rec.final_net));
    out.documents.emplace_back("dataset", dataset_to_json(train, p.test()));
  }

  Json& m = out.metrics;
  m["parameter_count"] = net0.parameter_count();
  m["final"] = checkpoint_json(rec.last());
  for (const char* k : {"train_loss", "test_loss", "train_err", "test_err", "norm_total", "null_norm"})
    m[k] = m["final"][k];
  m["iterations_run"] = rec.last().iter;
  m["stopped_early"] = rec.stopped_early;
  m["max_null_ratio"] = num(max_null_ratio(rec));
  Json iters = Json::array(), trl = Json::array(), tel = Json::array();
  for (const auto& c : rec.checkpoints) {
    iters.push_back(c.iter);
    trl.push_back(num(c.train_loss));
    tel.push_back(num(c.test_loss));
  }
  m["curve"] = {{"iter", iters}, {"train_loss", trl}, {"test_loss", tel}};

  const Network& fin = rec.final_net;
  if (fin.activation.is_identity() && fin.hidden_layers() <= 1 && kind == LossKind::Square) {
    const Matrix product = fin.hidden_layers() == 0 ? fin.weights[0] : Matrix(fin.weights[1] * fin.weights[0]);
    const MinNormGap gap = min_norm_gap(product, train);
    m["min_norm_rel_distance"] = num(gap.rel_distance);
    m["min_norm_null_norm"] = num(gap.null_norm);
  }
  if (p.test() && rec.checkpoints.size() >= 2) {
    const EarlyStop e = early_stop_analysis(rec);
    m["early_stop"] = {{"argmin_iter", e.argmin_iter},
                       {"min_test_loss", num(e.min_test_loss)},
                       {"final_test_loss", num(e.final_test_loss)},
                       {"overfit_ratio", num(e.overfit_ratio)}};
  }
  if (s.has("tikhonov.lambdas")) {
    if (!fin.activation.is_identity() || kind != LossKind::Square)
      throw InvalidInput("tikhonov.lambdas needs a linear network and the square loss");
    const auto lambdas = s.get_doubles("tikhonov.lambdas");
    const auto path = tikhonov_path(train, p.test(), lambdas);
    CsvTable t({"lambda", "inv_lambda", "train_loss", "test_loss", "train_err", "test_err"});
    for (const auto& q : path)
      t.add_row({format_double(q.lambda), format_double(1.0 / q.lambda), format_double(q.train_loss),
                 format_double(q.test_loss), format_double(q.train_err), format_double(q.test_err)});
    out.tables.emplace_back("tikhonov", std::move(t));
    const double a = rec.last().test_loss;
    const double b = path.back().test_loss;
    m["tikhonov_final_test_loss"] = num(b);
    m["gd_final_test_loss"] = num(a);
    m["path_rel_diff"] = num(std::abs(a - b) / std::max(std::abs(b), 1e-300));
  }
  return out;
}

std::vector<double> doubles(const Json& a) {
  std::vector<double> v;
  for (const auto& x : a) v.push_back(x.is_number() ? x.get<double>() : kNaN);
  return v;
}

// Mean train and test curves over runs sharing the same checkpoint grid,
// with early stopping applied to the mean test curve.
void mean_curve(const std::vector<RunSummary>& runs, Json& agg, std::vector<NamedTable>& tables) {
  Json grid;
  std::vector<double> tr, te;
  int count = 0;
  for (const auto& r : runs) {
    if (!r.ok || !r.metrics.contains("curve")) continue;
    const Json& c = r.metrics["curve"];
    if (count == 0) {
      grid = c["iter"];
      tr.assign(grid.size(), 0.0);
      te.assign(grid.size(), 0.0);
    } else if (c["iter"] != grid) {
      return;
    }
    const auto a = doubles(c["train_loss"]), b = doubles(c["test_loss"]);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      tr[k] += a[k];
      te[k] += b[k];
    }
    ++count;
  }
  if (count == 0) return;
  RunRecord mean;
  CsvTable t({"iter", "mean_train_loss", "mean_test_loss"});
  for (std::size_t k = 0; k < grid.size(); ++k) {
    tr[k] /= count;
    te[k] /= count;
    t.add_row({std::to_string(grid[k].get<long>()), format_double(tr[k]), format_double(te[k])});
    Checkpoint c;
    c.iter = grid[k].get<long>();
    c.train_loss = tr[k];
    c.test_loss = te[k];
    mean.checkpoints.push_back(c);
  }
  tables.emplace_back("mean_curve.csv", std::move(t));
  agg["mean_final_train_loss"] = num(tr.back());
  agg["mean_final_test_loss"] = num(te.back());
  if (grid.size() >= 2 && std::all_of(te.begin(), te.end(), [](double v) { return std::isfinite(v); })) {
    const EarlyStop e = early_stop_analysis(mean);
    agg["mean_curve_early_stop"] = {{"argmin_iter", e.argmin_iter},
                                    {"min_test_loss", num(e.min_test_loss)},
                                    {"final_test_loss", num(e.final_test_loss)},
                                    {"overfit_ratio", num(e.overfit_ratio)}};
  }
}

void aggregate_train(const Scenario& s, const std::vector<RunSummary>& runs, Json& agg,
                     std::vector<NamedTable>& tables) {
  if (!s.has("sweep.param")) return mean_curve(runs, agg, tables);
  Json points;
  tables.emplace_back("sweep.csv",
                      mean_table_by_sweep(runs,
                                          {"parameter_count", "n_train", "train_loss", "test_loss",
                                           "train_err", "test_err", "norm_total"},
                                          points));
  agg["sweep_param"] = s.get("sweep.param");
  agg["points"] = std::move(points);
}

// --- perturb ----------------------------------------------------------------

RunOutput run_perturb(const Scenario& s, std::uint64_t seed) {
  RunOutput out;
  const Prepared p = prepare(s, seed, out);
  const Dataset& train = p.data.train;
  const Network net0 = build_network(s, train, seed);
  const LossKind kind = scenario_loss(s, train.task);
  const TrainConfig cfg = train_config(s, seed);
  const PerturbationConfig pc = perturbation_config(s, seed);
  const PerturbationRecord rec = perturb_retrain_cycle(net0, train, p.test(), kind, cfg, pc);

  auto cols = checkpoint_columns(net0.weights.size(), {"cycle"});
  cols.push_back("converged");
  cols.push_back("retrain_iters");
  CsvTable t(cols);
  const auto row = [&](int cycle, const Checkpoint& c, bool conv, long iters) {
    std::vector<std::string> r{std::to_string(cycle)};
    for (auto& cell : checkpoint_cells(c)) r.push_back(std::move(cell));
    r.push_back(conv ? "1" : "0");
    r.push_back(std::to_string(iters));
    t.add_row(std::move(r));
  };
  row(0, rec.initial, true, rec.initial_iters);
  Json nulls = Json::array(), norms = Json::array(), tests = Json::array(), trains = Json::array();
  double max_train = 0.0;
  for (const auto& c : rec.cycles) {
    row(c.cycle, c.metrics, c.converged, c.retrain_iters);
    nulls.push_back(num(c.metrics.null_norm));
    norms.push_back(num(c.metrics.norm_total));
    tests.push_back(num(c.metrics.test_loss));
    trains.push_back(num(c.metrics.train_loss));
    max_train = std::max(max_train, c.metrics.train_loss);
  }
  out.tables.emplace_back("cycles", std::move(t));
  Json& m = out.metrics;
  m["initial"] = checkpoint_json(rec.initial);
  m["initial_iters"] = rec.initial_iters;
  m["failures"] = rec.failures;
  m["max_retrain_train_loss"] = num(max_train);
  m["null_norm_by_cycle"] = std::move(nulls);
  m["norm_sq_by_cycle"] = std::move(norms);
  m["test_loss_by_cycle"] = std::move(tests);
  m["train_loss_by_cycle"] = std::move(trains);
  return out;
}

void aggregate_perturb(const Scenario&, const std::vector<RunSummary>& runs, Json& agg,
                       std::vector<NamedTable>& tables) {
  std::vector<PerturbationRecord> recs;
  std::vector<std::vector<double>> tests;
  double max_train = 0.0;
  int failures = 0;
  for (const auto& r : runs) {
    if (!r.ok) continue;
    PerturbationRecord pr;
    const auto nulls = doubles(r.metrics["null_norm_by_cycle"]);
    const auto norms = doubles(r.metrics["norm_sq_by_cycle"]);
    for (std::size_t k = 0; k < nulls.size(); ++k) {
      CycleRecord c;
      c.cycle = static_cast<int>(k) + 1;
      c.metrics.null_norm = nulls[k];
      c.metrics.norm_total = norms[k];
      pr.cycles.push_back(c);
    }
    recs.push_back(std::move(pr));
    tests.push_back(doubles(r.metrics["test_loss_by_cycle"]));
    max_train = std::max(max_train, get_num(r.metrics, "max_retrain_train_loss"));
    failures += r.metrics.value("failures", 0);
  }
  agg["repetitions_ok"] = recs.size();
  agg["max_retrain_train_loss"] = recs.empty() ? Json(nullptr) : num(max_train);
  agg["failures"] = failures;
  if (recs.empty()) return;
  const std::size_t cycles = recs.front().cycles.size();
  std::vector<double> mean_test(cycles, 0.0);
  for (const auto& t : tests)
    for (std::size_t k = 0; k < cycles && k < t.size(); ++k) mean_test[k] += t[k] / static_cast<double>(tests.size());
  agg["mean_test_loss_first"] = num(mean_test.front());
  agg["mean_test_loss_last"] = num(mean_test.back());
  try {
    const WalkFit w = walk_fit(recs);
    agg["walk"] = {{"exponent", num(w.exponent)},         {"exponent_se", num(w.exponent_se)},
                   {"ci_low", num(w.ci_low)},             {"ci_high", num(w.ci_high)},
                   {"walk_constant", num(w.walk_constant)}, {"norm_sq_slope", num(w.norm_sq_slope)}};
    CsvTable t({"m", "mean_null_norm", "mean_norm_sq", "mean_test_loss"});
    for (std::size_t k = 0; k < w.mean_null_norm.size(); ++k)
      t.add_row({std::to_string(k + 1), format_double(w.mean_null_norm[k]), format_double(w.mean_norm_sq[k]),
                 format_double(mean_test[k])});
    tables.emplace_back("walk.csv", std::move(t));
  } catch (const Error& e) {
    agg["walk_error"] = e.what();
  }
}

// --- minnorm_sweep ----------------------------------------------------------

double mse(const Matrix& w, const Dataset& d) {
  return (w * d.x - d.y).squaredNorm() / static_cast<double>(d.size());
}

RunOutput run_minnorm(const Scenario& s, std::uint64_t seed) {
  RunOutput out;
  const Prepared p = prepare(s, seed, out);
  const Matrix w = min_norm_solution(p.data.train);
  Json& m = out.metrics;
  m["features"] = p.data.train.x.rows();
  m["train_mse"] = num(mse(w, p.data.train));
  m["test_mse"] = p.test() ? num(mse(w, *p.test())) : Json(nullptr);
  m["weight_norm"] = num(w.norm());
  return out;
}

void aggregate_minnorm(const Scenario&, const std::vector<RunSummary>& runs, Json& agg,
                       std::vector<NamedTable>& tables) {
  Json points;
  tables.emplace_back("minnorm.csv", mean_table_by_sweep(runs, {"features", "train_mse", "test_mse", "weight_norm"}, points));
  double best = std::numeric_limits<double>::infinity();
  std::string arg;
  for (const auto& q : points) {
    const double t = get_num(q, "test_mse");
    if (t < best) {
      best = t;
      arg = q["sweep_value"].get<std::string>();
    }
  }
  agg["points"] = points;
  if (points.empty() || !std::isfinite(best)) return;
  const double last = get_num(points.back(), "test_mse");
  agg["min_test_mse"] = num(best);
  agg["argmin"] = arg;
  agg["last_test_mse"] = num(last);
  agg["last_over_min"] = num(last / best);
}

// --- logistic_margin --------------------------------------------------------

RunOutput run_margin(const Scenario& s, std::uint64_t seed) {
  RunOutput out;
  const Prepared p = prepare(s, seed, out);
  const TrainConfig cfg = train_config(s, seed);
  const MarginTrace tr = logistic_margin_run(p.data.train, cfg);
  CsvTable t({"iter", "angle_deg", "norm", "train_loss"});
  for (std::size_t k = 0; k < tr.iters.size(); ++k)
    t.add_row({std::to_string(tr.iters[k]), format_double(tr.angle_deg[k]), format_double(tr.norm[k]),
               format_double(tr.record.checkpoints[k].train_loss)});
  out.tables.emplace_back("margin", std::move(t));

  const long total = tr.iters.back();
  std::size_t tenth = 0;
  for (std::size_t k = 0; k < tr.iters.size(); ++k)
    if (tr.iters[k] <= total / 10) tenth = k;
  bool increasing = tr.separation_iter.has_value();
  if (increasing) {
    for (std::size_t k = 1; k < tr.iters.size(); ++k)
      if (tr.iters[k - 1] >= *tr.separation_iter && !(tr.norm[k] > tr.norm[k - 1])) increasing = false;
  }
  const Vector w = tr.record.final_net.weights[0].transpose();
  Json& m = out.metrics;
  m["oracle_margin"] = num(tr.oracle.margin);
  m["oracle_direction"] = {tr.oracle.direction(0), tr.oracle.direction(1)};
  m["angle_final"] = num(tr.angle_deg.back());
  m["angle_tenth"] = num(tr.angle_deg[tenth]);
  m["iter_tenth"] = tr.iters[tenth];
  m["separation_iter"] = tr.separation_iter ? Json(*tr.separation_iter) : Json(nullptr);
  m["norm_increasing_after_separation"] = increasing;
  m["final_norm"] = num(tr.norm.back());
  m["final_margin"] = num(w.norm() > 0 ? margin_of(w / w.norm(), p.data.train) : kNaN);
  return out;
}

void aggregate_margin(const Scenario&, const std::vector<RunSummary>& runs, Json& agg, std::vector<NamedTable>&) {
  double worst = 0.0;
  int slower = 0, increasing = 0, ok = 0;
  for (const auto& r : runs) {
    if (!r.ok) continue;
    ++ok;
    const double a = get_num(r.metrics, "angle_final");
    worst = std::isnan(a) ? a : std::max(worst, a);
    if (a < get_num(r.metrics, "angle_tenth")) ++slower;
    if (r.metrics.value("norm_increasing_after_separation", false)) ++increasing;
  }
  agg["max_angle_final"] = num(worst);
  agg["runs_angle_decreasing"] = slower;
  agg["runs_norm_increasing"] = increasing;
  agg["runs_ok"] = ok;
}

// --- relu_vs_poly -----------------------------------------------------------

std::pair<double, double> poly_interval(const Scenario& s, const Network& relu, const Prepared& p) {
  const std::string spec = s.get("polyapprox.interval", "auto");
  if (spec != "auto") {
    const auto v = s.get_doubles("polyapprox.interval");
    if (v.size() != 2 || !(v[0] < v[1])) throw InvalidInput("polyapprox.interval: need a < b");
    return {v[0], v[1]};
  }
  // Symmetric interval covering every hidden pre-activation, with margin.
  double r = 0.0;
  const auto scan = [&](const Matrix& x) {
    const ForwardTrace tr = trace_forward(relu, x);
    for (std::size_t k = 0; k + 1 < tr.pre.size(); ++k) r = std::max(r, tr.pre[k].cwiseAbs().maxCoeff());
  };
  scan(p.data.train.x);
  if (p.test()) scan(p.test()->x);
  const double margin = s.get_double("polyapprox.margin", 1.2);
  r = std::max(r * margin, 1e-3);
  return {-r, r};
}

RunOutput run_relu_vs_poly(const Scenario& s, std::uint64_t seed) {
  RunOutput out;
  const Prepared p = prepare(s, seed, out);
  const Dataset& train = p.data.train;
  const Network net0 = build_network(s, train, seed);
  if (net0.activation.kind() != ActivationKind::ReLU) throw InvalidInput("relu_vs_poly: model.activation must be relu");
  const LossKind kind = scenario_loss(s, train.task);
  const TrainConfig cfg = train_config(s, seed);
  const RunRecord relu = gd_run(net0, train, p.test(), kind, cfg);
  out.tables.emplace_back("relu", run_record_table(relu));

  const int degree = static_cast<int>(s.get_long("polyapprox.degree", 10));
  const auto [a, b] = poly_interval(s, relu.final_net, p);
  const PolyFit fit = fit_activation_poly(PolyTarget::relu(), degree, a, b);
  Matrix probes = train.x;
  if (p.test()) {
    probes.conservativeResize(Eigen::NoChange, train.size() + p.test()->size());
    probes.rightCols(p.test()->size()) = p.test()->x;
  }
  const SwapResult sw = swap_activation(relu.final_net, fit, probes);
  const Checkpoint swapped = evaluate(sw.net, 0, train, p.test(), kind, 0.0, nullptr);
  const TrainConfig rcfg = train_config(s, seed, s.has("retrain.iterations") ? "retrain." : "train.");
  const RunRecord poly = gd_run(sw.net, train, p.test(), kind, rcfg);
  out.tables.emplace_back("poly", run_record_table(poly));

  Json& m = out.metrics;
  m["poly_degree"] = degree;
  m["interval"] = {a, b};
  m["eps_sup"] = num(fit.eps_sup);
  m["coverage_ok"] = sw.coverage_ok;
  m["amplification"] = num(sw.amplification);
  m["max_output_diff"] = num(sw.max_output_diff);
  m["relu"] = checkpoint_json(relu.last());
  m["swapped"] = checkpoint_json(swapped);
  m["poly"] = checkpoint_json(poly.last());
  m["relu_test_err"] = num(relu.last().test_err);
  m["poly_test_err"] = num(poly.last().test_err);
  m["accuracy_gap_points"] = num(100.0 * std::abs(poly.last().test_err - relu.last().test_err));
  return out;
}

void aggregate_relu_vs_poly(const Scenario&, const std::vector<RunSummary>& runs, Json& agg,
                            std::vector<NamedTable>&) {
  double worst = 0.0;
  for (const auto& r : runs)
    if (r.ok) worst = std::max(worst, get_num(r.metrics, "accuracy_gap_points"));
  agg["max_accuracy_gap_points"] = num(worst);
}

// --- sgd_trend --------------------------------------------------------------

RunOutput run_sgd_trend(const Scenario& s, std::uint64_t seed) {
  RunOutput out;
  const Prepared p = prepare(s, seed, out);
  const Dataset& train = p.data.train;
  const double n = static_cast<double>(train.size());
  TrainConfig cfg = train_config(s, seed);
  cfg.eta = s.get_double("sgd.eta_scale", 1.0) / std::sqrt(n);
  cfg.iterations = static_cast<long>(s.get_double("sgd.passes", 1.0) * n);
  cfg.batch_size = 1;
  cfg.eval_every = std::max<long>(1, cfg.iterations / 8);
  const Network net = Network::zeros({static_cast<int>(train.x.rows()), static_cast<int>(train.y.rows())}, Activation::linear());
  const RunRecord rec = gd_run(net, train, p.test(), LossKind::Square, cfg);
  out.tables.emplace_back("checkpoints", run_record_table(rec));
  const Matrix& w = rec.final_net.weights[0];
  const Matrix ref = p.data.reference.size() ? p.data.reference : min_norm_solution(train);
  Json& m = out.metrics;
  m["eta"] = cfg.eta;
  m["iterations"] = cfg.iterations;
  m["distance"] = num((w - ref).norm());
  m["distance_empirical"] = num((w - min_norm_solution(train)).norm());
  m["train_loss"] = num(rec.last().train_loss);
  return out;
}

void aggregate_sgd_trend(const Scenario&, const std::vector<RunSummary>& runs, Json& agg,
                         std::vector<NamedTable>& tables) {
  Json points;
  tables.emplace_back("trend.csv", mean_table_by_sweep(runs, {"n_train", "eta", "distance", "distance_empirical"}, points));
  bool mono = points.size() >= 2;
  for (std::size_t k = 1; k < points.size(); ++k)
    if (!(get_num(points[k], "distance") < get_num(points[k - 1], "distance"))) mono = false;
  agg["points"] = points;
  agg["monotone_decreasing"] = mono;
}

// --- hessian ----------------------------------------------------------------

RunOutput run_hessian(const Scenario& s, std::uint64_t seed) {
  RunOutput out;
  const Prepared p = prepare(s, seed, out);
  const Dataset& train = p.data.train;
  const Network net0 = build_network(s, train, seed);
  const TrainConfig cfg = train_config(s, seed);
  const RunRecord rec = gd_run(net0, train, nullptr, LossKind::Square, cfg);
  out.tables.emplace_back("checkpoints", run_record_table(rec));
  const Network& net = rec.final_net;
  const long long n = train.size();
  Json& m = out.metrics;
  m["train_loss"] = num(rec.last().train_loss);
  m["parameter_count"] = net.parameter_count();

  const double tol = s.get_double("hessian.tol", kZeroEigenTol);
  const Matrix h = square_loss_hessian(net, train);
  const SpectrumReport sp = spectrum(h, tol);
  m["zero_count"] = sp.zero_count;
  m["lambda_max"] = num(sp.lambda_max);
  m["min_eigenvalue"] = num(sp.eigenvalues(sp.eigenvalues.size() - 1));
  CsvTable eig({"index", "eigenvalue"});
  for (Eigen::Index i = 0; i < sp.eigenvalues.size(); ++i)
    eig.add_row({std::to_string(i), format_double(sp.eigenvalues(i))});
  out.tables.emplace_back("spectrum", std::move(eig));

  const OverparamReport op = check_overparametrization(net.widths, n);
  m["overparametrized"] = op.any_satisfied;
  m["zero_eig_lower_bound"] = op.zero_eig_lower_bound;

  const auto grams = block_gramians(net, train.x);
  Json blocks = Json::array();
  bool within = true;
  for (std::size_t k = 0; k < grams.size(); ++k) {
    const auto rank = static_cast<long long>(rank_tol(grams[k], s.get_double("hessian.rank_tol", 1e-10)));
    const int mn = *std::min_element(net.widths.begin() + static_cast<long>(k) + 1, net.widths.end());
    const long long bound = n * mn;
    within = within && rank <= bound;
    blocks.push_back({{"layer", k + 1}, {"rank", rank}, {"bound", bound}, {"size", grams[k].rows()}});
  }
  m["blocks"] = std::move(blocks);
  m["block_ranks_within_bound"] = within;

  const Vector w = flatten(net);
  const auto f = [&](const Vector& v) { return loss(with_parameters(net, v), train, LossKind::Square); };
  const Matrix fd = numeric_hessian(f, w, s.get_double("hessian.fd_step", 1e-4));
  m["fd_rel_error"] = num((fd - h).norm() / h.norm());
  m["gauss_newton_rel_error"] = num((h - gauss_newton_hessian(net, train)).norm() / h.norm());

  const double gamma = s.get_double("hessian.weight_decay", 0.0);
  if (gamma > 0.0) {
    TrainConfig wcfg = train_config(s, seed, s.has("wd.iterations") ? "wd." : "train.");
    wcfg.weight_decay = gamma;
    wcfg.stop_loss.reset();
    const RunRecord wr = gd_run(net, train, nullptr, LossKind::Square, wcfg);
    const Network& wn = wr.final_net;
    double gnorm = 0.0;
    for (const auto& g : gradient(wn, train, LossKind::Square, gamma)) gnorm += g.squaredNorm();
    const SpectrumReport ws = spectrum(square_loss_hessian(wn, train, gamma), tol);
    const double lo = ws.eigenvalues(ws.eigenvalues.size() - 1);
    m["weight_decay"] = gamma;
    m["wd_gradient_norm"] = num(std::sqrt(gnorm));
    m["wd_min_eigenvalue"] = num(lo);
    m["wd_zero_count"] = ws.zero_count;
    m["wd_min_over_2gamma"] = num(lo / (2.0 * gamma));
  }
  return out;
}

void aggregate_hessian(const Scenario&, const std::vector<RunSummary>& runs, Json& agg, std::vector<NamedTable>&) {
  double fd = 0.0, gn = 0.0, wd = std::numeric_limits<double>::infinity();
  long min_zero = std::numeric_limits<long>::max();
  for (const auto& r : runs) {
    if (!r.ok) continue;
    fd = std::max(fd, get_num(r.metrics, "fd_rel_error"));
    gn = std::max(gn, get_num(r.metrics, "gauss_newton_rel_error"));
    min_zero = std::min(min_zero, r.metrics.value("zero_count", 0L));
    if (r.metrics.contains("wd_min_over_2gamma")) wd = std::min(wd, get_num(r.metrics, "wd_min_over_2gamma"));
  }
  agg["max_fd_rel_error"] = num(fd);
  agg["max_gauss_newton_rel_error"] = num(gn);
  if (min_zero != std::numeric_limits<long>::max()) agg["min_zero_count"] = min_zero;
  if (std::isfinite(wd)) agg["min_wd_eig_over_2gamma"] = wd;
}

struct Protocol {
  std::function<RunOutput(const Scenario&, std::uint64_t)> run;
  Aggregator aggregate;
};

const Protocol& protocol_for(const std::string& name) {
  static const std::vector<std::pair<std::string, Protocol>> table{
      {"train", {run_train, aggregate_train}},
      {"teacher_student", {run_train, aggregate_train}},
      {"perturb", {run_perturb, aggregate_perturb}},
      {"minnorm_sweep", {run_minnorm, aggregate_minnorm}},
      {"logistic_margin", {run_margin, aggregate_margin}},
      {"relu_vs_poly", {run_relu_vs_poly, aggregate_relu_vs_poly}},
      {"sgd_trend", {run_sgd_trend, aggregate_sgd_trend}},
      {"hessian", {run_hessian, aggregate_hessian}},
  };
  for (const auto& [k, v] : table)
    if (k == name) return v;
  throw InvalidInput("unknown protocol '" + name + "'");
}

std::string run_file(int index, int digits, const std::string& suffix, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "run_%0*d", digits, index);
  return std::string(buf) + "_" + suffix + ext;
}

}  // namespace

std::string code_version() { return FLATMIN_CODE_VERSION; }

int ScenarioResult::runs_ok() const {
  return static_cast<int>(std::count_if(runs.begin(), runs.end(), [](const RunSummary& r) { return r.ok; }));
}

const CsvTable* ScenarioResult::table(const std::string& name) const {
  for (const auto& [k, t] : tables)
    if (k == name) return &t;
  return nullptr;
}

std::vector<std::uint64_t> scenario_seeds(const Scenario& s) {
  std::vector<std::uint64_t> out;
  if (s.has("seeds")) {
    for (long v : s.get_longs("seeds")) out.push_back(static_cast<std::uint64_t>(v));
    if (out.empty()) throw InvalidInput("seeds must be nonempty");
    return out;
  }
  const long base = s.get_long("seed", 0L);
  const long reps = s.get_long("repetitions", 1L);
  if (reps < 1) throw InvalidInput("repetitions must be at least 1");
  for (long r = 0; r < reps; ++r) out.push_back(static_cast<std::uint64_t>(base + r));
  return out;
}

Activation scenario_activation(const Scenario& s) {
  const std::string a = s.get("model.activation", "linear");
  if (a == "linear") return Activation::linear();
  if (a == "relu") return Activation::relu();
  const auto colon = a.find(':');
  if (colon != std::string::npos) {
    const std::string head = a.substr(0, colon);
    const int k = static_cast<int>(Scenario().with("k", a.substr(colon + 1)).get_long("k"));
    if (head == "power") return Activation::power(k);
    if (head == "poly") {
      const auto v = s.has("model.poly_interval") ? s.get_doubles("model.poly_interval") : std::vector<double>{-3.0, 3.0};
      if (v.size() != 2) throw InvalidInput("model.poly_interval: need two values");
      return Activation::polynomial(fit_activation_poly(PolyTarget::relu(), k, v[0], v[1]).series());
    }
  }
  throw InvalidInput("model.activation: unknown activation '" + a + "'");
}

Network build_network(const Scenario& s, const Dataset& train, std::uint64_t seed) {
  std::vector<int> widths{static_cast<int>(train.x.rows())};
  for (int w : hidden_widths(s)) widths.push_back(w);
  widths.push_back(static_cast<int>(train.y.rows()));
  const Network shape = Network::zeros(widths, scenario_activation(s));
  const std::string scheme = s.get("model.init", "zero");
  const double std = s.get_double("model.init_std", 0.1);
  const std::uint64_t init_seed = seed + static_cast<std::uint64_t>(s.get_long("model.init_seed_offset", 0L));
  if (scheme == "zero") return init(shape, InitScheme::zero(), init_seed);
  if (scheme == "gaussian") return init(shape, InitScheme::gaussian(std), init_seed);
  if (scheme == "rowspace") return init(shape, InitScheme::row_space(train.x, std), init_seed);
  throw InvalidInput("model.init: unknown scheme '" + scheme + "'");
}

TrainConfig train_config(const Scenario& s, std::uint64_t seed, const std::string& prefix) {
  TrainConfig c;
  c.eta = s.get_double(prefix + "eta", s.get_double("train.eta", c.eta));
  c.iterations = s.get_long(prefix + "iterations", s.get_long("train.iterations", c.iterations));
  c.batch_size = static_cast<int>(s.get_long(prefix + "batch_size", s.get_long("train.batch_size", 0L)));
  c.weight_decay = s.get_double(prefix + "weight_decay", s.get_double("train.weight_decay", 0.0));
  c.eval_every = s.get_long(prefix + "eval_every", s.get_long("train.eval_every", c.eval_every));
  const std::string stop = prefix + "stop_loss";
  if (s.has(stop)) c.stop_loss = s.get_double(stop);
  const std::string sampling = s.get(prefix + "sampling", s.get("train.sampling", "replacement"));
  if (sampling == "replacement") c.sampling = Sampling::WithReplacement;
  else if (sampling == "cyclic") c.sampling = Sampling::CyclicShuffle;
  else throw InvalidInput(prefix + "sampling: unknown sampling '" + sampling + "'");
  c.seed = seed;
  c.validate();
  return c;
}

LossKind scenario_loss(const Scenario& s, Task task) {
  if (s.has("loss")) return loss_kind_from_string(s.get("loss"));
  switch (task) {
    case Task::BinaryClassification: return LossKind::Logistic;
    case Task::MulticlassOneHot: return LossKind::CrossEntropy;
    case Task::Regression: break;
  }
  return LossKind::Square;
}

PerturbationConfig perturbation_config(const Scenario& s, std::uint64_t seed) {
  PerturbationConfig c;
  const std::string rule = s.get("perturb.rule", "absolute");
  if (rule == "absolute") c.rule = PerturbationRule::absolute(s.get_double("perturb.value", 0.6));
  else if (rule == "relative") c.rule = PerturbationRule::relative_std(s.get_double("perturb.value", 0.25));
  else throw InvalidInput("perturb.rule: unknown rule '" + rule + "'");
  c.period = s.get_long("perturb.period", c.period);
  c.cycles = static_cast<int>(s.get_long("perturb.cycles", c.cycles));
  c.retrain_stop_loss = s.get_double("perturb.stop_loss", c.retrain_stop_loss);
  c.seed = seed ^ 0x5bd1e995ULL;
  c.validate();
  return c;
}

ScenarioResult run_scenario(const Scenario& in, const RunOptions& opts) {
  Scenario s = opts.full_budget ? in.full_budget() : in;
  if (opts.seed) {
    s = s.with("seed", std::to_string(*opts.seed));
    if (s.has("seeds")) {
      const auto n = s.get_longs("seeds").size();
      std::string list;
      for (std::size_t r = 0; r < n; ++r) list += (r ? "," : "") + std::to_string(*opts.seed + r);
      s = s.with("seeds", list);
    }
  }
  s.validate();
  const Protocol& proto = protocol_for(s.protocol());
  const auto seeds = scenario_seeds(s);
  const auto values = sweep_values(s);

  ScenarioResult res;
  res.scenario = s;
  for (std::size_t v = 0; v < values.size(); ++v)
    for (std::size_t r = 0; r < seeds.size(); ++r) {
      RunSummary rs;
      rs.index = static_cast<int>(res.runs.size());
      rs.seed = seeds[r];
      rs.sweep_value = values[v];
      res.runs.push_back(std::move(rs));
    }
  std::vector<RunOutput> outputs(res.runs.size());

  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < res.runs.size(); i = next++) {
      RunSummary& rs = res.runs[i];
      try {
        const Scenario rsc = s.has("sweep.param") ? s.with(s.get("sweep.param"), rs.sweep_value) : s;
        outputs[i] = proto.run(rsc, rs.seed);
        rs.metrics = outputs[i].metrics;
        rs.ok = true;
      } catch (const std::exception& e) {
        rs.ok = false;
        rs.error = e.what();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(opts.threads, static_cast<int>(res.runs.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  const int digits = std::max<int>(3, static_cast<int>(std::to_string(res.runs.size() - 1).size()));
  std::vector<std::pair<std::string, Json>> documents;
  for (std::size_t i = 0; i < res.runs.size(); ++i) {
    for (auto& [suffix, table] : outputs[i].tables)
      res.tables.emplace_back(run_file(res.runs[i].index, digits, suffix, ".csv"), std::move(table));
    for (auto& [suffix, doc] : outputs[i].documents)
      documents.emplace_back(run_file(res.runs[i].index, digits, suffix, ".json"), std::move(doc));
  }
  proto.aggregate(s, res.runs, res.aggregate, res.tables);

  Json runs = Json::array(), run_status = Json::array();
  Json dataset = nullptr;
  for (const auto& r : res.runs) {
    runs.push_back({{"index", r.index},
                    {"seed", r.seed},
                    {"sweep_value", r.sweep_value},
                    {"status", r.ok ? "ok" : "failed"},
                    {"error", r.ok ? Json(nullptr) : Json(r.error)},
                    {"metrics", r.metrics}});
    run_status.push_back({{"index", r.index},
                          {"seed", r.seed},
                          {"sweep_value", r.sweep_value},
                          {"status", r.ok ? "ok" : "failed"},
                          {"error", r.ok ? Json(nullptr) : Json(r.error)}});
    if (dataset.is_null() && r.ok && r.metrics.contains("dataset_hash")) dataset = r.metrics["dataset_hash"];
  }
  Json scen{{"name", s.name()}, {"protocol", s.protocol()}, {"source", s.source()}, {"values", s.values()}};
  res.summary = {{"scenario", s.name()},
                 {"protocol", s.protocol()},
                 {"runs_ok", res.runs_ok()},
                 {"runs_failed", res.runs_failed()},
                 {"aggregate", res.aggregate},
                 {"runs", runs}};
  res.manifest = {{"schema", kManifestSchema}, {"scenario", scen},          {"seeds", seeds},
                  {"code_version", code_version()}, {"dataset_hash", dataset}, {"runs", run_status}};

  const std::string dir = !opts.out_dir.empty() ? opts.out_dir : s.get("output", "");
  if (opts.write && !dir.empty()) {
    ArtifactWriter w(dir);
    for (const auto& [name, table] : res.tables) w.write_csv(name, table);
    for (const auto& [name, doc] : documents) w.write_json(name, doc);
    w.write_json("summary.json", res.summary);
    w.commit(res.manifest);
    res.manifest["files"] = w.files();
    res.artifact_dir = dir;
  }
  return res;
}

}  // namespace flatmin
