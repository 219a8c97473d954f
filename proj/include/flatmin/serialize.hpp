#pragma once

// JSON documents for networks, datasets, spectra and polynomial fits, and
// the content hash used to identify datasets in run manifests.

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "flatmin/hessian.hpp"
#include "flatmin/models.hpp"
#include "flatmin/polyapprox.hpp"

namespace flatmin {

using Json = nlohmann::json;

inline constexpr const char* kNetworkSchema = "flatmin.network/1";
inline constexpr const char* kDatasetSchema = "flatmin.dataset/1";

/// {"rows": r, "cols": c, "data": [row-major entries]}
Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);

Json network_to_json(const Network& net);
/// Throws InvalidInput on schema, shape or finiteness violations.
Network network_from_json(const Json& j);

/// Training set plus an optional held-out split.
struct DatasetBundle {
  Dataset train;
  std::optional<Dataset> test;
};

Json dataset_to_json(const Dataset& train, const Dataset* test = nullptr);
DatasetBundle dataset_from_json(const Json& j);

Json spectrum_to_json(const SpectrumReport& r);

Json polyfit_to_json(const PolyFit& fit);
PolyFit polyfit_from_json(const Json& j);

/// FNV-1a 64 over the compact JSON text, as 16 hex digits.
std::string content_hash(const Json& j);
std::string dataset_hash(const Dataset& train, const Dataset* test = nullptr);

Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

}  // namespace flatmin
