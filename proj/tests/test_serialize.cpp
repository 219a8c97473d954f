#include <doctest.h>

#include <cinttypes>
#include <cstdio>
#include <filesystem>

#include "flatmin/error.hpp"
#include "flatmin/serialize.hpp"
#include "test_util.hpp"

using namespace flatmin;
using testutil::gaussian;

namespace {

std::string fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

}  // namespace

TEST_CASE("matrix json is row-major and round-trips bit-exactly") {
  std::mt19937_64 rng(1);
  const Matrix m = gaussian(3, 4, rng);
  const Json j = matrix_to_json(m);
  CHECK(j["rows"] == 3);
  CHECK(j["cols"] == 4);
  CHECK(j["data"][1].get<double>() == m(0, 1));
  CHECK(j["data"][4].get<double>() == m(1, 0));
  const Matrix back = matrix_from_json(Json::parse(j.dump()));
  CHECK((back.array() == m.array()).all());
}

TEST_CASE("matrix json rejects bad shapes and non-numbers") {
  CHECK_THROWS_AS(matrix_from_json(Json::parse(R"({"rows":2,"cols":2,"data":[1,2,3]})")), InvalidInput);
  CHECK_THROWS_AS(matrix_from_json(Json::parse(R"({"rows":1,"cols":1,"data":["x"]})")), InvalidInput);
  CHECK_THROWS_AS(matrix_from_json(Json::parse(R"({"rows":1})")), InvalidInput);
}

TEST_CASE("networks round-trip for every activation") {
  std::mt19937_64 rng(2);
  for (const Activation& a : {Activation::linear(), Activation::relu(), Activation::power(3),
                              Activation::polynomial(cheb::Series({0.1, 0.5, 0.2}, -2.0, 2.0))}) {
    Network net = Network::zeros({3, 4, 2}, a);
    net = init(net, InitScheme::gaussian(0.7), 5);
    const Network back = network_from_json(Json::parse(network_to_json(net).dump()));
    CHECK(back.widths == net.widths);
    CHECK(back.activation.kind() == a.kind());
    CHECK(back.seed == net.seed);
    const Matrix x = gaussian(3, 6, rng);
    CHECK((forward(back, x).array() == forward(net, x).array()).all());
  }
}

TEST_CASE("network json validation") {
  Json j = network_to_json(Network::zeros({2, 3, 1}, Activation::linear()));
  Json bad = j;
  bad["schema"] = "other/1";
  CHECK_THROWS_AS(network_from_json(bad), InvalidInput);
  bad = j;
  bad["widths"] = {2, 4, 1};
  CHECK_THROWS_AS(network_from_json(bad), InvalidInput);
  bad = j;
  bad["activation"]["kind"] = "tanh";
  CHECK_THROWS_AS(network_from_json(bad), InvalidInput);
}

TEST_CASE("datasets round-trip with and without a test split") {
  std::mt19937_64 rng(3);
  const Dataset train{gaussian(4, 5, rng), gaussian(2, 5, rng), Task::Regression};
  Dataset test{gaussian(4, 3, rng), Matrix::Zero(2, 3), Task::MulticlassOneHot};
  test.y(0, 0) = test.y(1, 1) = test.y(0, 2) = 1.0;
  const DatasetBundle a = dataset_from_json(dataset_to_json(train));
  CHECK_FALSE(a.test.has_value());
  CHECK((a.train.x.array() == train.x.array()).all());
  const DatasetBundle b = dataset_from_json(Json::parse(dataset_to_json(train, &test).dump()));
  REQUIRE(b.test.has_value());
  CHECK(b.test->task == Task::MulticlassOneHot);
  CHECK((b.test->y.array() == test.y.array()).all());

  Json bad = dataset_to_json(train, &test);
  bad["test"]["y"]["data"][0] = 0.5;  // one-hot column no longer sums to 1
  CHECK_THROWS_AS(dataset_from_json(bad), InvalidInput);
}

TEST_CASE("content hash is FNV-1a over the compact dump") {
  const Json j{{"b", 1}, {"a", {1.5, 2.0}}};
  CHECK(content_hash(j) == fnv1a(j.dump()));
  CHECK(content_hash(Json(0)) == fnv1a("0"));
  CHECK(fnv1a("") == "cbf29ce484222325");
  CHECK(fnv1a("a") == "af63dc4c8601ec8c");

  std::mt19937_64 rng(4);
  Dataset d{gaussian(2, 3, rng), gaussian(1, 3, rng), Task::Regression};
  const std::string h = dataset_hash(d);
  CHECK(h.size() == 16);
  CHECK(dataset_hash(d) == h);
  d.x(0, 0) = std::nextafter(d.x(0, 0), 10.0);
  CHECK(dataset_hash(d) != h);
}

TEST_CASE("spectrum and polyfit documents") {
  SpectrumReport r;
  r.eigenvalues = Vector{{3.0, 1.0, 0.0}};
  r.zero_count = 1;
  r.lambda_max = 3.0;
  const Json s = spectrum_to_json(r);
  CHECK(s["zero_count"] == 1);
  CHECK(s["eigenvalues"].size() == 3);

  const PolyFit f = fit_activation_poly(PolyTarget::relu(), 6, -2.0, 2.0);
  const PolyFit g = polyfit_from_json(Json::parse(polyfit_to_json(f).dump()));
  CHECK(g.degree == 6);
  CHECK(g.coeffs == f.coeffs);
  CHECK(eval_poly(g, 0.3) == eval_poly(f, 0.3));
  Json bad = polyfit_to_json(f);
  bad["coeffs"].erase(0);
  CHECK_THROWS_AS(polyfit_from_json(bad), InvalidInput);
}

TEST_CASE("json files") {
  const auto path = std::filesystem::temp_directory_path() / "flatmin_test_serialize.json";
  write_json_file(path.string(), Json{{"k", 1}});
  CHECK(read_json_file(path.string())["k"] == 1);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_json_file(path.string()), InvalidInput);
}

TEST_CASE("bundled fixture is a trained overparametrized net") {
  const Network net = network_from_json(read_json_file(FLATMIN_FIXTURE_DIR "/trained_net.json"));
  const DatasetBundle b = dataset_from_json(read_json_file(FLATMIN_FIXTURE_DIR "/trained_net_dataset.json"));
  CHECK(loss(net, b.train, LossKind::Square) < 1e-10);
  CHECK(check_overparametrization(net.widths, b.train.size()).any_satisfied);
}
