// flatmin command line: run scenarios and one-off analyses.
//
// Exit status: 0 success, 1 usage error or unreadable input, 2 run failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>

#include "flatmin/error.hpp"
#include "flatmin/experiments.hpp"
#include "flatmin/hessian.hpp"
#include "flatmin/polyapprox.hpp"
#include "flatmin/serialize.hpp"

#ifndef FLATMIN_SCENARIO_DIR
#define FLATMIN_SCENARIO_DIR "scenarios"
#endif

namespace fs = std::filesystem;
using namespace flatmin;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 1;
  bool full_budget = false;
};

// Usage problems and unreadable inputs.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Json load_json(const std::string& path) {
  if (!fs::is_regular_file(path)) throw UsageError("cannot read " + path);
  try {
    return read_json_file(path);
  } catch (const std::exception& e) {
    throw UsageError(path + ": " + e.what());
  }
}

Scenario load_scenario(const std::string& path) {
  if (!fs::is_regular_file(path)) throw UsageError("cannot read " + path);
  try {
    return Scenario::load(path);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

int run(const std::string& path, const Globals& g, bool perturb_only) {
  Scenario s = load_scenario(path);
  try {
    s.validate();
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  if (perturb_only && s.protocol() != "perturb")
    throw UsageError(path + ": protocol is '" + s.protocol() + "', expected 'perturb'");
  RunOptions o;
  o.seed = g.seed;
  o.out_dir = g.out;
  o.threads = g.threads;
  o.full_budget = g.full_budget;
  if (o.out_dir.empty() && !s.has("output")) o.out_dir = "artifacts/" + s.name();
  const ScenarioResult r = run_scenario(s, o);
  for (const auto& run : r.runs)
    if (!run.ok) std::cerr << "run " << run.index << " (seed " << run.seed << ") failed: " << run.error << "\n";
  std::cout << r.scenario.name() << ": " << r.runs_ok() << " ok, " << r.runs_failed() << " failed";
  if (!r.artifact_dir.empty()) std::cout << ", artifact " << r.artifact_dir;
  std::cout << "\n" << r.aggregate.dump(2) << "\n";
  return r.runs_ok() == 0 ? 2 : 0;
}

int spectrum_cmd(const std::string& weights, const std::string& data, double tol) {
  const Json wj = load_json(weights);
  const Json dj = load_json(data);
  Network net;
  DatasetBundle b;
  try {
    net = network_from_json(wj);
    b = dataset_from_json(dj);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  const Matrix h = square_loss_hessian(net, b.train);
  Json out = spectrum_to_json(spectrum(h, tol));
  const OverparamReport op = check_overparametrization(net.widths, b.train.size());
  out["train_loss"] = loss(net, b.train, LossKind::Square);
  out["overparametrized"] = op.any_satisfied;
  out["zero_eig_lower_bound"] = op.zero_eig_lower_bound;
  std::cout << out.dump(2) << "\n";
  return 0;
}

int minnorm_cmd(const std::string& data) {
  DatasetBundle b;
  try {
    b = dataset_from_json(load_json(data));
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  const Matrix w = min_norm_solution(b.train);
  Network net = Network::zeros({static_cast<int>(w.cols()), static_cast<int>(w.rows())}, Activation::linear());
  net.weights[0] = w;
  Json out{{"weights", network_to_json(net)},
           {"norm", w.norm()},
           {"train_loss", loss(net, b.train, LossKind::Square)}};
  if (b.test) out["test_loss"] = loss(net, *b.test, LossKind::Square);
  std::cout << out.dump(2) << "\n";
  return 0;
}

std::pair<double, double> parse_interval(std::string s) {
  s.erase(std::remove_if(s.begin(), s.end(), [](char c) { return c == '[' || c == ']' || c == ' '; }), s.end());
  const auto sep = s.find_first_of(",:");
  if (sep == std::string::npos) throw UsageError("interval must look like a,b");
  try {
    std::size_t p1 = 0, p2 = 0;
    const std::string lo = s.substr(0, sep), hi = s.substr(sep + 1);
    const double a = std::stod(lo, &p1), b = std::stod(hi, &p2);
    if (p1 != lo.size() || p2 != hi.size()) throw std::invalid_argument("trailing");
    if (!(a < b)) throw UsageError("interval needs a < b");
    return {a, b};
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception&) {
    throw UsageError("bad interval '" + s + "'");
  }
}

int fit_poly_cmd(int degree, const std::string& interval, const std::string& target, double beta) {
  const auto [a, b] = parse_interval(interval);
  PolyTarget t;
  if (target == "relu") t = PolyTarget::relu();
  else if (target == "softrelu") t = PolyTarget::soft_relu(beta);
  else throw UsageError("unknown target '" + target + "'");
  PolyFit fit;
  try {
    fit = fit_activation_poly(t, degree, a, b);
  } catch (const InvalidInput& e) {
    throw UsageError(e.what());
  }
  std::cout << polyfit_to_json(fit).dump(2) << "\n";
  return 0;
}

int list_cmd(const std::string& dir) {
  if (!fs::is_directory(dir)) throw UsageError("no scenario directory " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".scn") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      const Scenario s = Scenario::load(f.string());
      std::cout << s.name() << "\t" << s.protocol() << "\t" << f.string() << "\n";
    } catch (const std::exception& e) {
      std::cout << f.filename().string() << "\tinvalid\t" << e.what() << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flatmin: implicit regularization and degenerate minima experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Base seed, replacing the scenario's");
  app.add_option("--out", g.out, "Artifact directory");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--full-budget", g.full_budget, "Use the full.* budgets of the scenario");

  std::string scenario_path, weights, data, interval, target = "relu", dir = FLATMIN_SCENARIO_DIR;
  int degree = 0;
  double tol = kZeroEigenTol, beta = 20.0;

  auto* run_cmd = app.add_subcommand("run", "Run a scenario file");
  run_cmd->add_option("scenario", scenario_path)->required();
  auto* perturb = app.add_subcommand("perturb", "Run a perturb-retrain scenario");
  perturb->add_option("scenario", scenario_path)->required();
  auto* spec = app.add_subcommand("spectrum", "Hessian spectrum of a trained network");
  spec->add_option("weights", weights)->required();
  spec->add_option("dataset", data)->required();
  spec->add_option("--tol", tol, "Zero-eigenvalue tolerance");
  auto* mn = app.add_subcommand("minnorm", "Minimum-norm linear solution");
  mn->add_option("dataset", data)->required();
  auto* fp = app.add_subcommand("fit-poly", "Polynomial fit of ReLU on an interval");
  fp->add_option("degree", degree)->required();
  fp->add_option("interval", interval, "a,b (use [a,b] for negative a)")->required();
  fp->add_option("--target", target, "relu | softrelu");
  fp->add_option("--beta", beta, "SoftReLU sharpness");
  auto* ls = app.add_subcommand("list-scenarios", "List bundled scenarios");
  ls->add_option("--dir", dir, "Scenario directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  if (seed_opt->count()) g.seed = seed;

  try {
    if (*run_cmd) return run(scenario_path, g, false);
    if (*perturb) return run(scenario_path, g, true);
    if (*spec) return spectrum_cmd(weights, data, tol);
    if (*mn) return minnorm_cmd(data);
    if (*fp) return fit_poly_cmd(degree, interval, target, beta);
    if (*ls) return list_cmd(dir);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
