#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "flatmin/error.hpp"
#include "flatmin/experiments.hpp"

using namespace flatmin;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("flatmin_test_" + name);
  fs::remove_all(p);
  return p;
}

Scenario small_linear(int reps) {
  return Scenario::parse(
      "schema = flatmin-scenario/1\n"
      "name = small\n"
      "protocol = train\n"
      "dataset.generator = random_linear\n"
      "dataset.d = 12\n"
      "dataset.n_train = 5\n"
      "dataset.n_test = 4\n"
      "model.hidden =\n"
      "model.init = zero\n"
      "train.eta = 0.3\n"
      "train.iterations = 300\n"
      "train.eval_every = 50\n"
      "full.train.iterations = 600\n"
      "seed = 3\n"
      "repetitions = " +
      std::to_string(reps) + "\n");
}

}  // namespace

TEST_CASE("numbers are written with round-trip precision") {
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(format_double(std::nan("")) == "nan");
  CHECK(format_double(-HUGE_VAL) == "-inf");
  CHECK(format_double(2.0) == "2");
}

TEST_CASE("csv tables") {
  CsvTable t({"a", "b"});
  t.add_row({"1", "2"});
  CHECK_THROWS_AS(t.add_row({"1"}), Error);
  CHECK(t.text() == "a,b\n1,2\n");
  CHECK(checkpoint_columns(2, {"cycle"}) ==
        std::vector<std::string>{"cycle", "iter", "train_loss", "test_loss", "train_err", "test_err",
                                 "norm_total", "norm_layer_1", "norm_layer_2", "null_norm"});
}

TEST_CASE("artifact writer commits atomically") {
  const fs::path dir = scratch("writer");
  {
    ArtifactWriter w(dir.string());
    CsvTable t({"x"});
    t.add_row({"1"});
    w.write_csv("t.csv", t);
    CHECK_FALSE(fs::exists(dir));  // nothing visible before commit
  }
  CHECK_FALSE(fs::exists(dir));  // abandoned writers leave nothing behind
  for (const auto& e : fs::directory_iterator(dir.parent_path()))
    CHECK(e.path().filename().string().find("flatmin_test_writer.tmp") == std::string::npos);

  fs::create_directories(dir);
  std::ofstream(dir / "stale.csv") << "old\n";
  ArtifactWriter w(dir.string());
  w.write_json("s.json", Json{{"k", 1}});
  w.commit(Json{{"schema", kManifestSchema}});
  CHECK_FALSE(fs::exists(dir / "stale.csv"));
  CHECK(fs::exists(dir / "s.json"));
  const Json m = read_json_file((dir / "manifest.json").string());
  CHECK(m["files"][0]["name"] == "s.json");
  fs::remove_all(dir);
}

TEST_CASE("manifest references every csv with its columns and row count") {
  const fs::path dir = scratch("manifest");
  RunOptions o;
  o.out_dir = dir.string();
  const ScenarioResult r = run_scenario(small_linear(3), o);
  CHECK(r.runs_ok() == 3);
  CHECK(r.artifact_dir == dir.string());

  const Json m = read_json_file((dir / "manifest.json").string());
  CHECK(m["schema"] == kManifestSchema);
  CHECK(m["scenario"]["name"] == "small");
  CHECK(m["seeds"] == Json::array({3, 4, 5}));
  CHECK(m["code_version"] == code_version());
  CHECK(m["dataset_hash"].get<std::string>().size() == 16);
  CHECK(m["runs"].size() == 3);
  CHECK(m["runs"][2]["status"] == "ok");

  std::set<std::string> listed, on_disk;
  for (const auto& f : m["files"]) {
    listed.insert(f["name"].get<std::string>());
    if (f["kind"] != "csv") continue;
    const std::string text = slurp(dir / f["name"].get<std::string>());
    const auto header = text.substr(0, text.find('\n'));
    std::string expect;
    for (const auto& c : f["columns"]) expect += (expect.empty() ? "" : ",") + c.get<std::string>();
    CHECK(header == expect);
    CHECK(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) == f["rows"].get<std::size_t>() + 1);
  }
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename() != "manifest.json") on_disk.insert(e.path().filename().string());
  CHECK(listed == on_disk);
  CHECK(on_disk.count("run_000_checkpoints.csv"));
  CHECK(on_disk.count("summary.json"));
  fs::remove_all(dir);
}

TEST_CASE("same scenario and seeds give byte-identical artifacts at any thread count") {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  RunOptions o;
  o.out_dir = a.string();
  run_scenario(small_linear(4), o);
  o.out_dir = b.string();
  o.threads = 3;
  run_scenario(small_linear(4), o);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
    ++files;
  }
  CHECK(files >= 6);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("repetitions with an explicit seed list") {
  RunOptions o;
  o.write = false;
  const Scenario s = small_linear(1).with("seeds", "8,8");
  const ScenarioResult r = run_scenario(s, o);
  REQUIRE(r.runs.size() == 2);
  CHECK(r.table("run_000_checkpoints.csv")->text() == r.table("run_001_checkpoints.csv")->text());
}

TEST_CASE("seed override and full budget") {
  RunOptions o;
  o.write = false;
  o.seed = 100;
  o.full_budget = true;
  const ScenarioResult r = run_scenario(small_linear(2), o);
  CHECK(r.manifest["seeds"] == Json::array({100, 101}));
  CHECK(r.runs[0].metrics["iterations_run"] == 600);
  CHECK(r.artifact_dir.empty());
}

TEST_CASE("failed runs are recorded, not thrown") {
  RunOptions o;
  o.write = false;
  const Scenario s = small_linear(1).with("sweep.param", "train.eta").with("sweep.values", "0.3, 1e6");
  const ScenarioResult r = run_scenario(s, o);
  REQUIRE(r.runs.size() == 2);
  CHECK(r.runs[0].ok);
  CHECK_FALSE(r.runs[1].ok);
  CHECK(r.runs[1].error.find("iteration") != std::string::npos);
  CHECK(r.manifest["runs"][1]["status"] == "failed");
  CHECK(r.manifest["runs"][1]["sweep_value"] == "1e6");
  CHECK(r.summary["runs_failed"] == 1);
  const Json& sweep = r.aggregate["points"];
  CHECK(sweep[1]["runs_ok"] == 0);
}

TEST_CASE("invalid scenarios throw before any run") {
  RunOptions o;
  o.write = false;
  CHECK_THROWS_AS(run_scenario(small_linear(1).with("protocol", "nope"), o), InvalidInput);
  CHECK_THROWS_AS(run_scenario(small_linear(1).with("schema", "v0"), o), InvalidInput);
  // Bad model keys fail inside the runs.
  const ScenarioResult r = run_scenario(small_linear(1).with("model.activation", "tanh"), o);
  CHECK(r.runs_failed() == 1);
}

TEST_CASE("train protocol reports the minimum-norm gap") {
  RunOptions o;
  o.write = false;
  const ScenarioResult r = run_scenario(small_linear(2).with("train.iterations", "20000").with("train.eval_every", "1000"), o);
  for (const auto& run : r.runs) {
    CHECK(run.metrics["min_norm_rel_distance"].get<double>() < 1e-8);
    CHECK(run.metrics["max_null_ratio"].get<double>() < 1e-12);
  }
  CHECK(r.aggregate.contains("mean_curve_early_stop"));
}

TEST_CASE("network build keys") {
  const Scenario s = small_linear(1).with("model.hidden", "3,2").with("model.activation", "power:2").with("model.init", "gaussian");
  Dataset d{Matrix::Ones(4, 2), Matrix::Ones(1, 2), Task::Regression};
  const Network net = build_network(s, d, 1);
  CHECK(net.widths == std::vector<int>{4, 3, 2, 1});
  CHECK(net.activation.kind() == ActivationKind::Power);
  CHECK(net.weights[0].norm() > 0.0);
  CHECK(scenario_activation(s.with("model.activation", "poly:5")).kind() == ActivationKind::Polynomial);
  CHECK_THROWS_AS(build_network(s.with("model.init", "xavier"), d, 1), InvalidInput);
  CHECK_THROWS_AS(build_network(s.with("model.hidden", "0"), d, 1), InvalidInput);
  CHECK(scenario_loss(s, Task::MulticlassOneHot) == LossKind::CrossEntropy);
  CHECK(scenario_loss(s.with("loss", "square"), Task::MulticlassOneHot) == LossKind::Square);
  CHECK(scenario_loss(Scenario(), Task::BinaryClassification) == LossKind::Logistic);
  CHECK_THROWS_AS(train_config(s.with("train.sampling", "random"), 0), InvalidInput);
}

TEST_CASE("perturb protocol writes cycles and the walk table") {
  const Scenario s = Scenario::parse(
      "schema = flatmin-scenario/1\nname = p\nprotocol = perturb\n"
      "dataset.generator = sine\ndataset.n_train = 5\ndataset.n_test = 20\n"
      "dataset.features.degree = 12\ndataset.seed = 0\n"
      "model.hidden =\nmodel.init = zero\ntrain.eta = 0.5\ntrain.iterations = 3000\n"
      "perturb.value = 0.3\nperturb.period = 600\nperturb.cycles = 10\n"
      "seed = 1\nrepetitions = 10\n");
  RunOptions o;
  o.write = false;
  const ScenarioResult r = run_scenario(s, o);
  REQUIRE(r.runs_ok() == 10);
  const CsvTable* walk = r.table("walk.csv");
  REQUIRE(walk != nullptr);
  CHECK(walk->rows() == 10);
  const CsvTable* cycles = r.table("run_000_cycles.csv");
  REQUIRE(cycles != nullptr);
  CHECK(cycles->rows() == 11);
  CHECK(cycles->header().front() == "cycle");
  CHECK(r.aggregate["walk"]["exponent"].get<double>() > 0.0);
  CHECK(r.aggregate["max_retrain_train_loss"].get<double>() < 1e-8);
}

TEST_CASE("minimum-norm sweep over feature degree") {
  const Scenario s = Scenario::parse(
      "schema = flatmin-scenario/1\nname = m\nprotocol = minnorm_sweep\n"
      "dataset.generator = sine\ndataset.n_train = 10\ndataset.n_test = 50\n"
      "sweep.param = dataset.features.degree\nsweep.values = 1:20\n");
  RunOptions o;
  o.write = false;
  const ScenarioResult r = run_scenario(s, o);
  CHECK(r.runs_ok() == 20);
  REQUIRE(r.table("minnorm.csv") != nullptr);
  CHECK(r.table("minnorm.csv")->rows() == 20);
  // Interpolation from degree 9 on.
  CHECK(r.runs[15].metrics["train_mse"].get<double>() < 1e-20);
  CHECK(r.aggregate["last_over_min"].get<double>() >= 1.0);
}
