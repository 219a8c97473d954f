#include "flatmin/serialize.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "flatmin/error.hpp"

namespace flatmin {

Json matrix_to_json(const Matrix& m) {
  Json data = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const Json& j) {
  try {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const Json& data = j.at("data");
    if (rows < 0 || cols < 0 || !data.is_array() ||
        data.size() != static_cast<std::size_t>(rows * cols))
      throw InvalidInput("matrix: data length does not match rows * cols");
    Matrix m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (!data[k].is_number()) throw InvalidInput("matrix: non-numeric entry");
        m(r, c) = data[k++].get<double>();
      }
    require_finite(m, "matrix");
    return m;
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("matrix: ") + e.what());
  }
}

namespace {

Json activation_to_json(const Activation& a) {
  Json j{{"kind", to_string(a.kind())}};
  if (a.kind() == ActivationKind::Power) j["power"] = a.power_degree();
  if (a.kind() == ActivationKind::Polynomial) {
    j["basis"] = "chebyshev";
    j["coeffs"] = a.series().coeffs();
    j["interval"] = {a.series().a(), a.series().b()};
  }
  return j;
}

Activation activation_from_json(const Json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "linear") return Activation::linear();
  if (kind == "relu") return Activation::relu();
  if (kind == "power") return Activation::power(j.at("power").get<int>());
  if (kind == "polynomial") {
    if (j.value("basis", "chebyshev") != "chebyshev")
      throw InvalidInput("activation: only the chebyshev basis is supported");
    const auto iv = j.at("interval").get<std::vector<double>>();
    if (iv.size() != 2) throw InvalidInput("activation: interval needs two endpoints");
    return Activation::polynomial(
        cheb::Series(j.at("coeffs").get<std::vector<double>>(), iv[0], iv[1]));
  }
  throw InvalidInput("activation: unknown kind '" + kind + "'");
}

Json dataset_part(const Dataset& d) {
  return {{"task", to_string(d.task)}, {"x", matrix_to_json(d.x)}, {"y", matrix_to_json(d.y)}};
}

Dataset dataset_part_from(const Json& j) {
  Dataset d;
  d.task = task_from_string(j.at("task").get<std::string>());
  d.x = matrix_from_json(j.at("x"));
  d.y = matrix_from_json(j.at("y"));
  d.validate();
  return d;
}

}  // namespace

Json network_to_json(const Network& net) {
  net.validate();
  Json w = Json::array();
  for (const auto& m : net.weights) w.push_back(matrix_to_json(m));
  Json j{{"schema", kNetworkSchema},
         {"widths", net.widths},
         {"activation", activation_to_json(net.activation)},
         {"weights", std::move(w)}};
  j["seed"] = net.seed ? Json(*net.seed) : Json(nullptr);
  return j;
}

Network network_from_json(const Json& j) {
  try {
    if (j.value("schema", "") != kNetworkSchema)
      throw InvalidInput(std::string("network: expected schema ") + kNetworkSchema);
    Network net;
    net.widths = j.at("widths").get<std::vector<int>>();
    net.activation = activation_from_json(j.at("activation"));
    for (const auto& m : j.at("weights")) net.weights.push_back(matrix_from_json(m));
    if (j.contains("seed") && !j.at("seed").is_null()) net.seed = j.at("seed").get<std::uint64_t>();
    net.validate();
    return net;
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("network: ") + e.what());
  }
}

Json dataset_to_json(const Dataset& train, const Dataset* test) {
  Json j{{"schema", kDatasetSchema}, {"train", dataset_part(train)}};
  if (test) j["test"] = dataset_part(*test);
  return j;
}

DatasetBundle dataset_from_json(const Json& j) {
  try {
    if (j.value("schema", "") != kDatasetSchema)
      throw InvalidInput(std::string("dataset: expected schema ") + kDatasetSchema);
    DatasetBundle b;
    b.train = dataset_part_from(j.at("train"));
    if (j.contains("test")) b.test = dataset_part_from(j.at("test"));
    return b;
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("dataset: ") + e.what());
  }
}

Json spectrum_to_json(const SpectrumReport& r) {
  std::vector<double> ev(r.eigenvalues.data(), r.eigenvalues.data() + r.eigenvalues.size());
  return {{"eigenvalues", ev},
          {"zero_count", r.zero_count},
          {"tolerance", r.tolerance},
          {"lambda_max", r.lambda_max}};
}

Json polyfit_to_json(const PolyFit& fit) {
  return {{"degree", fit.degree},
          {"interval", {fit.a, fit.b}},
          {"basis", "chebyshev"},
          {"coeffs", fit.coeffs},
          {"eps_sup", fit.eps_sup},
          {"deriv_weighted_err", fit.deriv_weighted_err}};
}

PolyFit polyfit_from_json(const Json& j) {
  try {
    PolyFit f;
    f.degree = j.at("degree").get<int>();
    const auto iv = j.at("interval").get<std::vector<double>>();
    if (iv.size() != 2 || !(iv[0] < iv[1])) throw InvalidInput("polyfit: bad interval");
    f.a = iv[0];
    f.b = iv[1];
    f.coeffs = j.at("coeffs").get<std::vector<double>>();
    if (f.coeffs.size() != static_cast<std::size_t>(f.degree) + 1)
      throw InvalidInput("polyfit: expected degree + 1 coefficients");
    f.eps_sup = j.value("eps_sup", 0.0);
    f.deriv_weighted_err = j.value("deriv_weighted_err", 0.0);
    return f;
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("polyfit: ") + e.what());
  }
}

std::string content_hash(const Json& j) {
  const std::string text = j.dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

std::string dataset_hash(const Dataset& train, const Dataset* test) {
  return content_hash(dataset_to_json(train, test));
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw InvalidInput(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed: " + path);
}

}  // namespace flatmin
