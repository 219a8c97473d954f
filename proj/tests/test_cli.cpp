#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "flatmin/serialize.hpp"

using flatmin::Json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded; stdout is captured.
Result cli(const std::string& args) {
  const std::string cmd = std::string("\"") + FLATMIN_CLI + "\" " + args + " 2>/dev/null";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string stderr_of(const std::string& args) {
  const std::string cmd = std::string("\"") + FLATMIN_CLI + "\" " + args + " 2>&1 >/dev/null";
  std::string out;
  FILE* p = popen(cmd.c_str(), "r");
  char buf[4096];
  std::size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  pclose(p);
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("flatmin_cli_" + name);
  fs::remove_all(p);
  return p;
}

const std::string kFixtures = FLATMIN_FIXTURE_DIR;
const std::string kScenarios = FLATMIN_SCENARIO_DIR;

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(cli("").code == 1);
  CHECK(cli("frobnicate").code == 1);
  CHECK(cli("run").code == 1);
  CHECK(cli("run /nonexistent/file.scn").code == 1);
  CHECK(stderr_of("run /nonexistent/file.scn").find("cannot read") != std::string::npos);
  CHECK(cli("spectrum " + kFixtures + "/trained_net.json").code == 1);
  CHECK(cli("fit-poly 100 [-3,3]").code == 1);
  CHECK(cli("fit-poly 4 3,1").code == 1);
  CHECK(cli("--threads 0 list-scenarios").code == 1);
  CHECK(cli("perturb " + kScenarios + "/brando2.scn").code == 1);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("unreadable or corrupt inputs exit with 1") {
  const fs::path bad = scratch("bad.json");
  std::ofstream(bad) << "{ not json";
  CHECK(cli("minnorm " + bad.string()).code == 1);
  CHECK(cli("spectrum " + bad.string() + " " + kFixtures + "/trained_net_dataset.json").code == 1);
  std::ofstream(bad) << R"({"schema": "flatmin.dataset/1"})";
  CHECK(cli("minnorm " + bad.string()).code == 1);
  fs::remove(bad);
}

TEST_CASE("run on the bundled sine scenario populates the artifact") {
  const fs::path out = scratch("brando2");
  const Result r = cli("run " + kScenarios + "/brando2.scn --out " + out.string() + " --threads 2");
  CHECK(r.code == 0);
  CHECK(fs::exists(out / "manifest.json"));
  CHECK(fs::exists(out / "summary.json"));
  CHECK(fs::exists(out / "run_000_checkpoints.csv"));
  CHECK(fs::exists(out / "mean_curve.csv"));
  const Json m = flatmin::read_json_file((out / "manifest.json").string());
  CHECK(m["runs"].size() == 30);
  fs::remove_all(out);
}

TEST_CASE("global flags before or after the subcommand") {
  const fs::path a = scratch("seed_a"), b = scratch("seed_b");
  const std::string scn = kFixtures + "/trained_net.scn";
  CHECK(cli("--seed 5 --out " + a.string() + " run " + scn).code == 0);
  CHECK(cli("run " + scn + " --seed 5 --out " + b.string()).code == 0);
  const Json ma = flatmin::read_json_file((a / "manifest.json").string());
  const Json mb = flatmin::read_json_file((b / "manifest.json").string());
  CHECK(ma["seeds"] == Json::array({5}));
  CHECK(ma == mb);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("run failure exits with 2") {
  const fs::path scn = scratch("fail.scn"), out = scratch("fail_out");
  std::ofstream(scn) << "schema = flatmin-scenario/1\nname = f\nprotocol = train\n"
                        "dataset.generator = random_linear\ntrain.eta = 1e6\ntrain.iterations = 100\n";
  CHECK(cli("run " + scn.string() + " --out " + out.string()).code == 2);
  const Json m = flatmin::read_json_file((out / "manifest.json").string());
  CHECK(m["runs"][0]["status"] == "failed");
  fs::remove(scn);
  fs::remove_all(out);
}

TEST_CASE("spectrum of the trained fixture has a zero eigenvalue") {
  const Result r = cli("spectrum " + kFixtures + "/trained_net.json " + kFixtures + "/trained_net_dataset.json");
  REQUIRE(r.code == 0);
  const Json j = Json::parse(r.out);
  CHECK(j["zero_count"].get<int>() >= 1);
  CHECK(j["train_loss"].get<double>() < 1e-10);
  CHECK(j["overparametrized"] == true);
}

TEST_CASE("minnorm, fit-poly and list-scenarios") {
  const Result mn = cli("minnorm " + kFixtures + "/trained_net_dataset.json");
  REQUIRE(mn.code == 0);
  const Json j = Json::parse(mn.out);
  CHECK(j["train_loss"].get<double>() < 1e-20);
  CHECK(j["weights"]["schema"] == "flatmin.network/1");

  const Result fp = cli("fit-poly 1 [-1,1]");
  REQUIRE(fp.code == 0);
  const Json f = Json::parse(fp.out);
  CHECK(f["eps_sup"].get<double>() == doctest::Approx(0.25).epsilon(1e-6));

  const Result ls = cli("list-scenarios");
  REQUIRE(ls.code == 0);
  for (const char* name : {"brando", "brando1", "brando2", "brando3", "one_hidden_lin", "width_sweep", "scrambled",
                           "logistic_margin", "relu_vs_poly", "sgd_trend", "min_norm", "hessian_linear",
                           "hessian_power2"})
    CHECK(ls.out.find(std::string(name) + "\t") != std::string::npos);
  CHECK(ls.out.find("invalid") == std::string::npos);
}
